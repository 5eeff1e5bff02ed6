from .config import PlannerConfig
from .model import (
    Batch,
    PlannerModel,
    SlotDistributions,
    load_checkpoint,
    save_checkpoint,
    softmax,
)
from .decoding import (
    EmptyInventory,
    PinsInfeasible,
    PlanResult,
    constant_plan,
    first_pass_anchors,
    majority_style,
    plan_song,
    project_to_inventory,
    snap_style,
)
from .training import (
    Adam,
    DataTooSmall,
    EmptyMask,
    evaluate,
    grad_check,
    masked_loss,
    train,
)
from .vocab import (
    TokenSequence,
    TokenVocab,
    build_vocab,
    encode_context,
    expected_token_count,
    melody_summary,
    structure_vector,
)
