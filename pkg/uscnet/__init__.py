from .config import (  # noqa: F401
    GeneratorConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    dump_config,
    load_config,
    parse_config_text,
)
from .data_synth import (  # noqa: F401
    crop_stone_cube,
    generate_dataset,
    stratified_kfold,
    window_normalize,
)
from .losses import (  # noqa: F401
    LossWeights,
    bce_loss,
    dice_loss,
    focal_loss,
    total_loss,
    update_weights,
)
from .model import (  # noqa: F401
    forward,
    init_params,
)
from .storage import (  # noqa: F401
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from .training import (  # noqa: F401
    evaluate,
    run_cv,
    train_fold,
)
from .ablation import (  # noqa: F401
    run_ablation,
)
