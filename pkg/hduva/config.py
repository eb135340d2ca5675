"""
Run configuration.

All settings live in one flat schema keyed by dotted names
(``section.key``).  A RunConfig starts from the schema defaults, can be
loaded from a key-value text file and overridden from the command line, and
hands out the typed, frozen configs the model and trainer consume.
"""
import logging
from pathlib import Path

from .errors import ArgumentError, MissingArtifactError
from .mmd import KernelSpec
from .model import Betas, ModelConfig
from .name_filter import unknown_name_error
from .scenarios.sources import default_data_root
from .schema import SchemaConfigurable, parse_flag_pairs
from .training import TrainConfig
from .weak_supervision import WeakSupConfig

logger = logging.getLogger(__name__)

CONFIG_SCHEMA = {
    # model
    "model.variant": {"dtype": str, "default": "hduva", "opts": ["hduva", "lhduva", "deep_all"],
                      "description": "Model variant; deep_all trains only the z_y encoder and classifier"},
    "model.latent_dim_zx": {"dtype": int, "default": 64, "description": "Dimension of z_x"},
    "model.latent_dim_zy": {"dtype": int, "default": 64, "description": "Dimension of z_y"},
    "model.latent_dim_zd": {"dtype": int, "default": 64, "description": "Dimension of z_d"},
    "model.topic_dim": {"dtype": int, "default": 3, "description": "Topic dimension K"},
    "model.num_classes": {"dtype": int, "default": 0,
                          "description": "Number of classes; 0 infers it from the data"},
    "model.image_shape": {"dtype": tuple, "item": int, "default": (),
                          "description": "C,H,W; empty infers it from the data"},
    "model.with_zx": {"dtype": bool, "default": True, "description": "Keep the residual latent z_x"},
    "model.decoder_uses_s": {"dtype": str, "default": "auto", "opts": ["auto", "on", "off"],
                             "description": "Feed the topic to the decoder (auto: on for hduva)"},
    "model.topic_samples": {"dtype": int, "default": 1, "description": "Topic draws per instance"},
    "model.shared_trunk": {"dtype": bool, "default": False,
                           "description": "Share one conv trunk between all image encoders"},
    "model.hidden_dim": {"dtype": int, "default": 64, "description": "Width of prior/topic MLPs"},
    "model.prior_alpha": {"dtype": tuple, "default": (),
                          "description": "Dirichlet prior concentration; empty is the flat prior"},
    # training
    "train.beta_x": {"dtype": float, "default": 1.0, "description": "Target multiplier of KL(z_x)"},
    "train.beta_y": {"dtype": float, "default": 1.0, "description": "Target multiplier of KL(z_y)"},
    "train.beta_d": {"dtype": float, "default": 1.0, "description": "Target multiplier of the z_d term"},
    "train.beta_s": {"dtype": float, "default": 1.0, "description": "Target multiplier of KL(s)"},
    "train.gamma_y": {"dtype": float, "default": 1e5, "description": "Auxiliary classifier weight"},
    "train.warmup_epochs": {"dtype": int, "default": 100, "description": "Linear beta warm-up length"},
    "train.max_epochs": {"dtype": int, "default": 500, "description": "Epoch limit"},
    "train.early_stop_patience": {"dtype": int, "default": 100,
                                  "description": "Epochs without improvement before stopping"},
    "train.learning_rate": {"dtype": float, "default": 1e-4, "description": "Adam learning rate"},
    "train.batch_size": {"dtype": int, "default": 64, "description": "Mini-batch size per domain"},
    "train.seed": {"dtype": int, "default": 0, "description": "Seed for weights, batching and sampling"},
    "train.selection": {"dtype": str, "default": "extended_elbo",
                        "opts": ["extended_elbo", "val_accuracy"],
                        "description": "Model selection criterion"},
    "train.grad_clip": {"dtype": float, "default": 100.0, "description": "Global gradient norm limit"},
    "train.min_improvement": {"dtype": float, "default": 1e-6,
                              "description": "Absolute improvement that resets patience"},
    "train.semi_supervised_domain": {"dtype": str, "default": "unlabeled",
                                     "description": "Domain name of instances without domain label"},
    # weak supervision
    "weak.aggregation": {"dtype": bool, "default": False, "description": "Mini-batch topic aggregation"},
    "weak.mmd": {"dtype": bool, "default": False, "description": "Pairwise MMD penalty on z_d"},
    "weak.gamma_d": {"dtype": float, "default": 1.0, "description": "MMD Lagrange multiplier"},
    "weak.bandwidths": {"dtype": tuple, "default": (0.1, 1.0, 10.0),
                        "description": "Gaussian kernel scale coefficients"},
    # data
    "data.root": {"dtype": str, "default": default_data_root,
                  "description": "Dataset root (MNIST, Malaria corpus)"},
    "data.manifest": {"dtype": str, "default": "", "description": "Scenario directory"},
    "data.train_domains": {"dtype": tuple, "item": str, "default": (),
                           "description": "Training domains; empty uses every non-test domain"},
    "data.test_domain": {"dtype": str, "default": "", "description": "Held-out domain"},
    # evaluation
    "eval.n_repeats": {"dtype": int, "default": 10, "description": "Seeds per LODO test domain"},
    "eval.workers": {"dtype": int, "default": 1, "description": "Worker processes for LODO repeats"},
    # output
    "run.out": {"dtype": str, "default": "runs", "description": "Output directory"},
}


class RunConfig(SchemaConfigurable):
    """
    The resolved configuration of one run.
    """

    def __init__(self, config: dict | None = None):
        self._config = self._generate_default_config()
        if config:
            self.set_config(config)

    def get_config_schema(self) -> dict:
        return CONFIG_SCHEMA

    def __getitem__(self, key: str):
        if key not in CONFIG_SCHEMA:
            raise unknown_name_error("config key", key, list(CONFIG_SCHEMA))
        return self._config[key]

    def validate_config(self):
        super().validate_config()
        c = self._config
        for key in ("train.beta_x", "train.beta_y", "train.beta_d", "train.beta_s",
                    "train.gamma_y", "weak.gamma_d", "train.learning_rate"):
            if c[key] < 0:
                raise ArgumentError(f"{key} must be >= 0, got {c[key]}")
        for key in ("train.batch_size", "train.max_epochs", "train.early_stop_patience",
                    "model.topic_samples", "eval.n_repeats", "eval.workers"):
            if c[key] < 1:
                raise ArgumentError(f"{key} must be >= 1, got {c[key]}")

    # loading

    def load_file(self, path) -> 'RunConfig':
        """
        Reads ``section.key = value`` lines; blank lines and ``#`` comments
        are ignored.  Later lines win.
        """
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"No config file at {path}")
        values = {}
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ArgumentError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        self.set_config(values)
        logger.debug("Loaded %d settings from %s", len(values), path)
        return self

    def apply_overrides(self, args: list[str]) -> 'RunConfig':
        """
        Applies ``--section.key value`` / ``--section.key=value`` pairs.
        """
        self.set_config(dict(parse_flag_pairs(args)))
        return self

    def to_text(self) -> str:
        """Flat file form, loadable with load_file."""
        lines = []
        for key in CONFIG_SCHEMA:
            value = self._config[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "on" if value else "off"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def snapshot(self) -> dict:
        """Fully resolved settings, JSON-friendly."""
        return {key: list(value) if isinstance(value, tuple) else value
                for key, value in self._config.items()}

    # typed views

    def model_config(self, num_classes: int | None = None,
                     image_shape: tuple | None = None) -> ModelConfig:
        """
        ModelConfig for this run.  num_classes / image_shape from the data
        are used when the config leaves them unset.
        """
        c = self._config
        classes = c["model.num_classes"] or num_classes
        shape = c["model.image_shape"] or image_shape
        if not classes or not shape:
            raise ArgumentError("model.num_classes and model.image_shape are unknown; "
                                "set them or pass the training data")
        uses_s = {"auto": None, "on": True, "off": False}[c["model.decoder_uses_s"]]
        variant = "hduva" if c["model.variant"] == "deep_all" else c["model.variant"]
        return ModelConfig(
            num_classes=int(classes),
            image_shape=tuple(int(v) for v in shape),
            variant=variant,
            latent_dim_zx=c["model.latent_dim_zx"],
            latent_dim_zy=c["model.latent_dim_zy"],
            latent_dim_zd=c["model.latent_dim_zd"],
            topic_dim=c["model.topic_dim"],
            with_zx=c["model.with_zx"],
            decoder_uses_s=uses_s,
            topic_samples=c["model.topic_samples"],
            shared_trunk=c["model.shared_trunk"],
            hidden_dim=c["model.hidden_dim"],
            prior_alpha=c["model.prior_alpha"] or None,
        )

    def weak_config(self) -> WeakSupConfig:
        c = self._config
        return WeakSupConfig(use_aggregation=c["weak.aggregation"],
                             use_mmd=c["weak.mmd"],
                             gamma_d=c["weak.gamma_d"],
                             kernel=KernelSpec(tuple(c["weak.bandwidths"])))

    def train_config(self) -> TrainConfig:
        c = self._config
        return TrainConfig(
            beta_targets=Betas(c["train.beta_x"], c["train.beta_y"],
                               c["train.beta_d"], c["train.beta_s"]),
            gamma_y=c["train.gamma_y"],
            warmup_epochs=c["train.warmup_epochs"],
            max_epochs=c["train.max_epochs"],
            # patience is capped so a short max_epochs override stays valid
            early_stop_patience=min(c["train.early_stop_patience"], c["train.max_epochs"]),
            learning_rate=c["train.learning_rate"],
            batch_size=c["train.batch_size"],
            seed=c["train.seed"],
            selection=c["train.selection"],
            weak=self.weak_config(),
            grad_clip=c["train.grad_clip"],
            min_improvement=c["train.min_improvement"],
            semi_supervised_domain=c["train.semi_supervised_domain"] or None,
        )
