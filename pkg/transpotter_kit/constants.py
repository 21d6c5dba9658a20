"""
Constants useful across modules.
"""

#: ARPAbet phoneme inventory without lexical stress, sorted lexicographically
ARPABET = [
    "AA",
    "AE",
    "AH",
    "AO",
    "AW",
    "AY",
    "B",
    "CH",
    "D",
    "DH",
    "EH",
    "ER",
    "EY",
    "F",
    "G",
    "HH",
    "IH",
    "IY",
    "JH",
    "K",
    "L",
    "M",
    "N",
    "NG",
    "OW",
    "OY",
    "P",
    "R",
    "S",
    "SH",
    "T",
    "TH",
    "UH",
    "UW",
    "V",
    "W",
    "Y",
    "Z",
    "ZH",
]

#: ARPAbet vowels, the only symbols that carry stress digits
VOWELS = [
    "AA",
    "AE",
    "AH",
    "AO",
    "AW",
    "AY",
    "EH",
    "ER",
    "EY",
    "IH",
    "IY",
    "OW",
    "OY",
    "UH",
    "UW",
]

#: Stress digits used by the CMU dictionary
STRESS_DIGITS = ["0", "1", "2"]

#: Reserved padding symbol, always at index 0 of a phoneme vocabulary
PAD = "<pad>"

#: Comment prefix of CMU-dictionary files
LEXICON_COMMENT = ";;;"

#: Model variants
VARIANTS = [
    "transpotter",
    "transpotter_no_loc",
    "enc_vid_dec_text",
    "enc_text_dec_vid",
]

#: Variants that emit frame-level predictions
LOC_VARIANTS = ["transpotter", "enc_text_dec_vid"]

#: Localization head kinds
LOC_HEADS = ["frame_sigmoid", "span_softmax"]

#: Feed-forward nonlinearities
ACTIVATIONS = ["relu", "gelu"]

#: Model defaults from the published hyper-parameters
MODEL_DEFAULTS = {
    "d": 512,
    "heads": 8,
    "text_layers": 3,
    "video_layers": 6,
    "joint_layers": 6,
    "d_in": 512,
    "vocab_size": len(ARPABET) + 1,
    "max_frames": 160,
    "max_phonemes": 40,
    "variant": "transpotter",
    "loc_head": "frame_sigmoid",
    "modality_embeddings": False,
    "ffn_multiplier": 4,
    "activation": "relu",
    "dropout": 0.1,
}

#: Training defaults from the published hyper-parameters
TRAIN_DEFAULTS = {
    "lam": 0.5,
    "batch_size": 32,
    "epochs": 280,
    "steps_per_epoch": 100,
    "lr": 5e-5,
    "min_lr": 1e-6,
    "plateau_patience": 15,
    "plateau_factor": 5.0,
    "grad_clip": 1.0,
    "val_fraction": 0.1,
    "val_pairs": 256,
    "min_phonemes": 3,
    "min_crop_frames": 8,
    "seed": 0,
}

#: Adam constants of the cited optimizer
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

#: Floor applied to probabilities before taking logs
LOG_FLOOR = 1e-12

#: Standard deviation and truncation (in standard deviations) of weight init
INIT_STD = 0.02
INIT_TRUNCATION = 2.0

#: Frame rate of the lip-reading corpora; only used for hours-equivalent summaries
FPS = 25

#: Feature file magic and version
TPFT_MAGIC = b"TPFT"
TPFT_VERSION = 1

#: Checkpoint file magic and version
CHECKPOINT_MAGIC = b"TPCK"
CHECKPOINT_VERSION = 1

#: Manifest keys, in the order they are written
MANIFEST_KEYS = ["id", "features", "words"]

#: Columns of the per-epoch training log
METRICS_LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "lr"]

#: Headline evaluation metrics, in report order
HEADLINE_METRICS = ["acc@1", "acc@5", "map_cls", "map_loc"]

#: Stratification axes of the evaluation report
STRATA_AXES = ["keyword_phoneme_length", "clip_word_count"]

#: Environment variable capping the evaluation worker pool
THREADS_ENV = "TRANSPOTTER_THREADS"

#: Colorbrewer 8-class Set2 colors
COLORS_SET2 = [
    "#66c2a5",
    "#fc8d62",
    "#8da0cb",
    "#e78ac3",
    "#a6d854",
    "#ffd92f",
    "#e5c494",
    "#b3b3b3",
]
