"""
Ablation suites.  Each suite is a list of named run configs derived from a
base config; every row is a full cross-validation run.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging

import pandas as pd

from .config import (
    TAP_NAMES,
    dump_config,
)
from .exceptions import ConfigError
from .metrics import REPORT_FIELDS
from .segmenter import decoder_taps
from .training import run_cv


logger = logging.getLogger(__name__)


CLASS_WEIGHT_RATIOS = (0.1, 0.3, 0.5, 0.7, 0.9)
THRESHOLD_SWEEP = (0.70, 0.75, 0.78, 0.80, 0.82, 0.85, 0.90)


def _with(run_config, model=None, train=None):
    return dataclasses.replace(
        run_config,
        model=dataclasses.replace(run_config.model, **(model or {})),
        train=dataclasses.replace(run_config.train, **(train or {})),
    )


def modules_suite(base):
    fixed = {'weighting': 'fixed', 'fixed_class_weight': 0.5}
    concat = {'cea_mode': 'concat', 'sma_mode': 'concat'}
    cea_only = {'cea_mode': 'attention', 'sma_mode': 'concat'}
    both = {'cea_mode': 'attention', 'sma_mode': 'attention'}
    return [
        ('ehr_only', _with(base, model={'use_ct': False}, train=fixed)),
        ('ct_only', _with(base, model={'use_ehr': False}, train=fixed)),
        ('ct_ehr_concat', _with(base, model=concat, train=fixed)),
        ('cea', _with(base, model=cea_only, train=fixed)),
        ('cea_sma', _with(base, model=both, train=fixed)),
        ('full', _with(base, model=both, train={'weighting': 'dynamic'})),
    ]


def taps_suite(base):
    rows = []
    for size in range(1, len(TAP_NAMES) + 1):
        for subset in itertools.combinations(TAP_NAMES, size):
            rows.append(('+'.join(subset), _with(base, model={'sma_taps': subset})))
    return rows


def losses_suite(base):
    return [
        ('dice_bce', _with(base, train={'use_bce': True, 'use_focal': False})),
        ('dice_focal', _with(base, train={'use_bce': False, 'use_focal': True})),
        ('dice_bce_focal', _with(base, train={'use_bce': True, 'use_focal': True})),
    ]


def weights_suite(base):
    rows = [
        (
            'class_{0:.1f}_seg_{1:.1f}'.format(ratio, 1.0 - ratio),
            _with(base, train={'weighting': 'fixed', 'fixed_class_weight': ratio}),
        )
        for ratio in CLASS_WEIGHT_RATIOS
    ]
    rows.append(('auto', _with(base, train={'weighting': 'dynamic'})))
    return rows


def threshold_suite(base):
    return [
        (
            'threshold_{0:.2f}'.format(threshold),
            _with(base, train={'weighting': 'dynamic', 'dice_threshold': threshold}),
        )
        for threshold in THRESHOLD_SWEEP
    ]


SUITES = {
    'modules': modules_suite,
    'taps': taps_suite,
    'losses': losses_suite,
    'weights': weights_suite,
    'threshold': threshold_suite,
}


def suite_rows(suite, base):
    if suite not in SUITES:
        raise ConfigError(
            "Unknown ablation suite {0!r}.  Must be one of {1}".format(
                suite,
                ', '.join(sorted(SUITES.keys())),
            )
        )
    return [(name, run_config.validate()) for name, run_config in SUITES[suite](base)]


def run_ablation(suite, base, samples, runner=run_cv):
    """
    One comparison row per suite entry: mean and std of every fold metric,
    the taps the decoder reads, and the row's config echo.
    """
    rows_to_run = suite_rows(suite, base)
    if suite == 'taps' and base.model.use_ct:
        fed = decoder_taps(base.model)
        idle = [name for name in TAP_NAMES if name not in fed]
        if idle:
            logger.warning(
                "Taps %s do not feed the decoder at patch_side %d; "
                "their rows differ only through the SMA fusion",
                ', '.join(idle),
                base.model.patch_side,
            )

    rows = []
    for name, run_config in rows_to_run:
        result = runner(run_config.model, run_config.train, samples)
        row = {'suite': suite, 'row': name}
        for field in REPORT_FIELDS:
            row[field] = result.summary[field]['mean']
            row[field + '_std'] = result.summary[field]['std']
        fed = decoder_taps(run_config.model) if run_config.model.use_ct else ()
        row['decoder_taps'] = ','.join(fed)
        row['config'] = dump_config(run_config)
        rows.append(row)
        logger.info("Ablation %s/%s: acc %.3f dice %.3f", suite, name, row['acc'], row['dice'])
    columns = ['suite', 'row']
    for field in REPORT_FIELDS:
        columns.extend([field, field + '_std'])
    columns.extend(['decoder_taps', 'config'])
    return pd.DataFrame(rows, columns=columns)
