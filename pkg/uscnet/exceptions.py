DEFAULT_MESSAGE = "An error occurred during execution"


def _format_value(value):
    text = str(value)
    if not text or any(char.isspace() for char in text) or '"' in text:
        return '"{0}"'.format(text.replace('"', "'"))
    return text


def _restore_error(cls, message, context):
    return cls(message, **context)


class USCNetError(Exception):
    message = DEFAULT_MESSAGE

    def __init__(self, message=None, **context):
        if message is not None:
            self.message = message
        self.context = context
        super(USCNetError, self).__init__(self.message)

    def __str__(self):
        if not self.context:
            return self.message
        return "{0} ({1})".format(
            self.message,
            ", ".join(
                "{0}={1}".format(key, value)
                for key, value in sorted(self.context.items())
            ),
        )

    def as_record(self):
        """
        Single line, ``key=value`` separated rendering used by the command line.
        """
        fields = [
            "error={0}".format(type(self).__name__),
            "message={0}".format(_format_value(self.message.replace("\n", " "))),
        ]
        fields.extend(
            "{0}={1}".format(key, _format_value(value))
            for key, value in sorted(self.context.items())
        )
        return " ".join(fields)

    def __reduce__(self):
        # keep the context across process boundaries
        return (_restore_error, (type(self), self.message, self.context))


class ShapeError(USCNetError, ValueError):
    message = "Tensor shapes are incompatible"


class DomainError(USCNetError, ValueError):
    message = "Value outside of the operation's domain"


class AutogradError(USCNetError):
    message = "Invalid use of the gradient tape"


class ConfigError(USCNetError, ValueError):
    message = "Invalid configuration"


class DataError(USCNetError):
    message = "Invalid or inconsistent dataset"


class MetricError(USCNetError, ValueError):
    message = "Metric precondition violated"


class TrainingError(USCNetError):
    message = "Training aborted"
