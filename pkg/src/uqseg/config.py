"""Run configuration: a flat key=value file with exhaustive validation.

The config file is the single source of truth for a run (no environment
overrides). Unknown keys, bad types, and out-of-range values are rejected with
the offending key named; every command echoes the effective configuration it
ran with.
"""

from dataclasses import dataclass, fields

from .phantom import PhantomSpec
from .supervision import GateParams, NoiseSchedule, PairSampler, PatchSpec
from .network import NetworkConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type constructor, default)
SCHEMA = {
    "seed": (int, 1234),
    "image_size": (int, 64),
    "num_classes": (int, 3),
    "n_train": (int, 32),
    "n_val": (int, 8),
    "n_test": (int, 8),
    "contrast_outer": (float, 0.42),
    "contrast_inner": (float, 0.2),
    "contrast_mod": (float, 0.5),
    "contrast_mod_sharpness": (float, 10.0),
    "edge_width_sharp": (float, 0.6),
    "edge_width_wide": (float, 4.0),
    "texture_amp": (float, 0.06),
    "pre_blur": (float, 0.3),
    "center_jitter": (float, 4.0),
    "outer_radius_min": (float, 0.28),
    "outer_radius_max": (float, 0.36),
    "inner_radius_min": (float, 0.45),
    "inner_radius_max": (float, 0.62),
    "levels": (int, 3),
    "base_width": (int, 8),
    "gamma": (float, 100.0),
    "d0": (float, 8.0),
    "delta": (float, 1.0),
    "d_g": (float, 2.0),
    "d_eps": (float, 2.5),
    "lambda_g_scale": (float, 90.0),
    "lambda_sigma_scale": (float, 50.0),
    "lambda_f_scale": (float, 100.0),
    "alpha0": (float, 0.01),
    "sigma1": (float, 0.025),
    "sigma2": (float, 0.10),
    "pairs_contrast": (int, 512),
    "pairs_geometry": (int, 256),
    "anchors_corruption": (int, 256),
    "normal_radius": (int, 2),
    "patch_radius": (int, 1),
    "epochs": (int, 60),
    "batch_size": (int, 4),
    "lr": (float, 1e-3),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "use_lg": (_bool, True),
    "use_lsigma": (_bool, True),
    "use_ld": (_bool, True),
    "train_manifest": (str, ""),
    "val_manifest": (str, ""),
    "test_manifest": (str, ""),
}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    image_size: int
    num_classes: int
    n_train: int
    n_val: int
    n_test: int
    contrast_outer: float
    contrast_inner: float
    contrast_mod: float
    contrast_mod_sharpness: float
    edge_width_sharp: float
    edge_width_wide: float
    texture_amp: float
    pre_blur: float
    center_jitter: float
    outer_radius_min: float
    outer_radius_max: float
    inner_radius_min: float
    inner_radius_max: float
    levels: int
    base_width: int
    gamma: float
    d0: float
    delta: float
    d_g: float
    d_eps: float
    lambda_g_scale: float
    lambda_sigma_scale: float
    lambda_f_scale: float
    alpha0: float
    sigma1: float
    sigma2: float
    pairs_contrast: int
    pairs_geometry: int
    anchors_corruption: int
    normal_radius: int
    patch_radius: int
    epochs: int
    batch_size: int
    lr: float
    beta1: float
    beta2: float
    adam_eps: float
    use_lg: bool
    use_lsigma: bool
    use_ld: bool
    train_manifest: str
    val_manifest: str
    test_manifest: str

    def __post_init__(self):
        if self.d0 < self.delta:
            raise ConfigError("d0 must be >= delta so that d_n = d0 - delta stays >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.image_size % (2 ** (self.levels - 1)) != 0:
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by 2^(levels-1) = "
                f"{2 ** (self.levels - 1)}"
            )
        if not (0.0 <= self.sigma1 <= self.sigma2):
            raise ConfigError("need 0 <= sigma1 <= sigma2")

    # derived threshold convention: thresholds sit symmetrically around d0
    @property
    def d_n(self):
        return self.d0 - self.delta

    @property
    def d_f(self):
        return self.d0 + self.delta

    def with_overrides(self, **kw):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(kw)
        return RunConfig(**values)

    def phantom_spec(self) -> PhantomSpec:
        return PhantomSpec(
            height=self.image_size,
            width=self.image_size,
            num_classes=self.num_classes,
            contrast=(self.contrast_outer, self.contrast_inner),
            contrast_mod=self.contrast_mod,
            contrast_mod_sharpness=self.contrast_mod_sharpness,
            edge_width_sharp=self.edge_width_sharp,
            edge_width_wide=self.edge_width_wide,
            texture_amp=self.texture_amp,
            pre_blur=self.pre_blur,
            center_jitter=self.center_jitter,
            outer_radius_range=(self.outer_radius_min, self.outer_radius_max),
            inner_radius_range=(self.inner_radius_min, self.inner_radius_max),
            seed=self.seed,
        )

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            num_classes=self.num_classes, levels=self.levels, base_width=self.base_width
        )

    def gate_params(self, anneal: float) -> GateParams:
        return GateParams(
            gamma=self.gamma,
            d_g=self.d_g,
            d_n=self.d_n,
            d_f=self.d_f,
            d_eps=self.d_eps,
            lambda_g=self.lambda_g_scale * anneal,
            lambda_sigma=self.lambda_sigma_scale * anneal,
            lambda_f=self.lambda_f_scale * anneal,
        )

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule((0.0, self.sigma1, self.sigma2))

    def sampler(self) -> PairSampler:
        return PairSampler(
            contrast_budget=self.pairs_contrast,
            geometry_budget=self.pairs_geometry,
            corruption_budget=self.anchors_corruption,
            normal_radius=self.normal_radius,
            patch=PatchSpec(self.patch_radius),
        )


def parse_config(path) -> RunConfig:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            ctor = SCHEMA[key][0]
            try:
                values[key] = ctor(text.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return config_from_dict(values)


def config_from_dict(values) -> RunConfig:
    for key in values:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
    merged = {key: values.get(key, default) for key, (_, default) in SCHEMA.items()}
    return RunConfig(**merged)


def write_effective(config: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key in SCHEMA:
            value = getattr(config, key)
            if isinstance(value, bool):
                value = "true" if value else "false"
            fh.write(f"{key}={value}\n")
