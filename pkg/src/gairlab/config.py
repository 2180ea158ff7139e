"""Experiment configuration: a sectioned ``key = value`` text format.

Example::

    [data]
    kind = blobs
    [model]
    hidden = 32, 32
    [trainer]
    kind = gairat
    epochs = 20
    [eval.pgd20]
    steps = 20

``#`` starts a comment. Unknown sections or keys are rejected with the
offending line number. Anything left out takes the documented default.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from gairlab.attacks import AttackConfig, RandomStart
from gairlab.losses import LossKind
from gairlab.optim import LrSchedule
from gairlab.reweight import Family, WeightScheme
from gairlab.trainers import MartVariant, TrainerConfig, TrainerKind


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class DataSpec:
    kind: str = "blobs"
    n_per_class: int = 200
    test_n_per_class: int = 200
    means: tuple[tuple[float, float], ...] = ((-1.0, 0.0), (1.0, 0.0))
    sigma: float = 0.5
    radii: tuple[float, ...] = (1.0, 2.0)
    noise: float = 0.05
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    limit: int = 0
    test_limit: int = 0
    class_count: int = 0


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple[int, ...] = (32, 32)
    # (out_channels, kernel) pairs applied before the dense stack
    conv: tuple[tuple[int, int], ...] = ()
    image: tuple[int, int, int] = (1, 28, 28)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec
    model: ModelSpec
    trainer: TrainerConfig
    evals: tuple[tuple[str, AttackConfig], ...]
    eval_every: int = 1
    flatness: str = "friendly"
    select: str = ""
    out: str = "runs/default"
    wall_clock: bool = False

    @property
    def seed(self) -> int:
        return self.trainer.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, trainer=replace(self.trainer, seed=seed))

    @property
    def selection_attack(self) -> str:
        return self.select or self.evals[0][0]


def _enum(cls):
    allowed = [m.value for m in cls]

    def parse(text):
        for m in cls:
            if m.value == text.lower():
                return m
        raise ValueError(f"{text!r} is not one of {', '.join(allowed)}")

    return parse


def _bool(text):
    t = text.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _pairs(conv_a, conv_b):
    def parse(text):
        out = []
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            a, b = item.split(":")
            out.append((conv_a(a), conv_b(b)))
        return tuple(out)

    return parse


def _points(text):
    return tuple(tuple(float(v) for v in p.replace(",", " ").split()) for p in text.split(";") if p.strip())


def _box(text):
    if text.lower() == "none":
        return None
    lo, hi = _floats(text)
    return (lo, hi)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text

    return parse


SCHEMA = {
    "run": {
        "seed": int,
        "out": str,
        "eval_every": int,
        "flatness": _choice("friendly", "most_adversarial"),
        "select": str,
        "wall_clock": _bool,
    },
    "data": {
        "kind": _choice("blobs", "circles", "idx"),
        "n_per_class": int,
        "test_n_per_class": int,
        "means": _points,
        "sigma": float,
        "radii": _floats,
        "noise": float,
        "train_images": str,
        "train_labels": str,
        "test_images": str,
        "test_labels": str,
        "limit": int,
        "test_limit": int,
        "class_count": int,
    },
    "model": {"hidden": _ints, "conv": _pairs(int, int), "image": _ints},
    "trainer": {
        "kind": _enum(TrainerKind),
        "epochs": int,
        "batch_size": int,
        "lr": float,
        "milestones": _pairs(int, float),
        "momentum": float,
        "weight_decay": float,
        "beta": float,
        "friendly": _bool,
        "tau_schedule": _pairs(int, int),
        "mart_variant": _enum(MartVariant),
    },
    "attack": {
        "epsilon": float,
        "alpha": float,
        "steps": int,
        "tau": int,
        "random_start": _enum(RandomStart),
        "xi": float,
        "loss": _enum(LossKind),
        "clamp_box": _box,
    },
    "scheme": {"family": _enum(Family), "lambda": float, "burn_in": int},
}
EVAL_KEYS = {
    "epsilon": float,
    "alpha": float,
    "steps": int,
    "restarts": int,
    "random_start": _enum(RandomStart),
    "clamp_box": _box,
}
REQUIRED = [("data", "kind"), ("trainer", "kind")]


def _read_sections(text):
    sections: dict[str, dict] = {}
    lines: dict[tuple[str, str], int] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            current = line[1:-1].strip()
            if current not in SCHEMA and not current.startswith("eval."):
                raise ConfigError(
                    f"unknown section [{current}]; expected one of {', '.join(SCHEMA)} or eval.<name>", lineno
                )
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno)
            sections[current] = {}
            lines[(current, "")] = lineno
            continue
        if current is None:
            raise ConfigError("key outside any section", lineno)
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        schema = EVAL_KEYS if current.startswith("eval.") else SCHEMA[current]
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{current}]; allowed: {', '.join(schema)}", lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            sections[current][key] = schema[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {current}.{key}: {exc}", lineno) from None
        lines[(current, key)] = lineno
    return sections, lines


def parse_config(text: str) -> ExperimentConfig:
    sections, lines = _read_sections(text)
    for sec, key in REQUIRED:
        if key not in sections.get(sec, {}):
            raise ConfigError(f"missing required key {sec}.{key}")
    if "model" not in sections:
        raise ConfigError("missing required section [model]")

    def get(sec, key, default):
        return sections.get(sec, {}).get(key, default)

    def checked(sec, build):
        try:
            return build()
        except ValueError as exc:
            raise ConfigError(f"invalid [{sec}]: {exc}", lines.get((sec, ""))) from None

    d = sections["data"]
    data = checked("data", lambda: DataSpec(**d))
    model = checked("model", lambda: ModelSpec(**sections["model"]))

    t = sections["trainer"]
    epochs = t.get("epochs", TrainerConfig.epochs)
    a = sections.get("attack", {})
    attack = checked("attack", lambda: AttackConfig(
        epsilon=a.get("epsilon", AttackConfig.epsilon),
        alpha=a.get("alpha", AttackConfig.alpha),
        steps=a.get("steps", AttackConfig.steps),
        tau=a.get("tau", 0),
        random_start=a.get("random_start", RandomStart.NONE),
        xi=a.get("xi", AttackConfig.xi),
        loss=a.get("loss", LossKind.CROSS_ENTROPY),
        clamp_box=a.get("clamp_box", (0.0, 1.0) if data.kind == "idx" else None),
    ))
    scheme = checked("scheme", lambda: WeightScheme(
        family=get("scheme", "family", Family.TANH),
        lam=get("scheme", "lambda", 0.0),
        burn_in_epochs=get("scheme", "burn_in", epochs // 2),
    ))
    trainer = checked("trainer", lambda: TrainerConfig(
        kind=t["kind"],
        attack=attack,
        scheme=scheme,
        beta=t.get("beta", TrainerConfig.beta),
        epochs=epochs,
        batch_size=t.get("batch_size", TrainerConfig.batch_size),
        schedule=LrSchedule(t.get("lr", 0.1), t.get("milestones", ())),
        momentum=t.get("momentum", TrainerConfig.momentum),
        weight_decay=t.get("weight_decay", TrainerConfig.weight_decay),
        seed=get("run", "seed", 0),
        friendly=t.get("friendly", False),
        tau_schedule=t.get("tau_schedule", ()),
        mart_variant=t.get("mart_variant", MartVariant.GAIR_MARGIN),
    ))

    evals = []
    for sec, keys in sections.items():
        if not sec.startswith("eval."):
            continue
        name = sec[len("eval."):]
        if not name or not name.replace("_", "").isalnum():
            raise ConfigError(f"bad eval attack name {name!r}", lines[(sec, "")])
        eps = keys.get("epsilon", attack.epsilon)
        evals.append((name, checked(sec, lambda: AttackConfig(
            epsilon=eps,
            alpha=keys.get("alpha", eps / 4 if eps > 0 else attack.alpha),
            steps=keys.get("steps", 20),
            restarts=keys.get("restarts", 1),
            random_start=keys.get("random_start", RandomStart.UNIFORM),
            clamp_box=keys.get("clamp_box", attack.clamp_box),
        ))))
    if not evals:
        eps = attack.epsilon
        evals.append(("pgd20", AttackConfig(
            epsilon=eps, alpha=eps / 4 if eps > 0 else attack.alpha, steps=20,
            random_start=RandomStart.UNIFORM, clamp_box=attack.clamp_box,
        )))

    select = get("run", "select", "")
    if select and select not in [n for n, _ in evals]:
        raise ConfigError(f"run.select names unknown eval attack {select!r}", lines.get(("run", "select")))
    eval_every = get("run", "eval_every", 1)
    if eval_every < 1:
        raise ConfigError("run.eval_every must be >= 1", lines.get(("run", "eval_every")))
    return ExperimentConfig(
        data=data,
        model=model,
        trainer=trainer,
        evals=tuple(evals),
        eval_every=eval_every,
        flatness=get("run", "flatness", "friendly"),
        select=select,
        out=get("run", "out", "runs/default"),
        wall_clock=get("run", "wall_clock", False),
    )


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if hasattr(v, "value"):
        return v.value
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _fmt_pairs(pairs):
    return ", ".join(f"{_fmt(a)}:{_fmt(b)}" for a, b in pairs)


def _fmt_box(box):
    return "none" if box is None else f"{_fmt(box[0])}, {_fmt(box[1])}"


def serialize_config(cfg: ExperimentConfig) -> str:
    """Fully explicit text form; ``parse_config`` inverts it."""
    d, m, t = cfg.data, cfg.model, cfg.trainer
    a, s = t.attack, t.scheme
    out = [
        "[run]",
        f"seed = {t.seed}",
        f"out = {cfg.out}",
        f"eval_every = {cfg.eval_every}",
        f"flatness = {cfg.flatness}",
        f"wall_clock = {_fmt(cfg.wall_clock)}",
    ]
    if cfg.select:
        out.append(f"select = {cfg.select}")
    out += [
        "",
        "[data]",
        f"kind = {d.kind}",
        f"n_per_class = {d.n_per_class}",
        f"test_n_per_class = {d.test_n_per_class}",
        "means = " + "; ".join(", ".join(_fmt(v) for v in p) for p in d.means),
        f"sigma = {_fmt(d.sigma)}",
        "radii = " + ", ".join(_fmt(r) for r in d.radii),
        f"noise = {_fmt(d.noise)}",
    ]
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        if getattr(d, key):
            out.append(f"{key} = {getattr(d, key)}")
    out += [f"limit = {d.limit}", f"test_limit = {d.test_limit}", f"class_count = {d.class_count}"]
    out += ["", "[model]", "hidden = " + ", ".join(str(h) for h in m.hidden)]
    if m.conv:
        out.append(f"conv = {_fmt_pairs(m.conv)}")
    out.append("image = " + ", ".join(str(v) for v in m.image))
    out += [
        "",
        "[trainer]",
        f"kind = {t.kind.value}",
        f"epochs = {t.epochs}",
        f"batch_size = {t.batch_size}",
        f"lr = {_fmt(t.schedule.initial)}",
        f"milestones = {_fmt_pairs(t.schedule.milestones)}",
        f"momentum = {_fmt(t.momentum)}",
        f"weight_decay = {_fmt(t.weight_decay)}",
        f"beta = {_fmt(t.beta)}",
        f"friendly = {_fmt(t.friendly)}",
        f"tau_schedule = {_fmt_pairs(t.tau_schedule)}",
        f"mart_variant = {t.mart_variant.value}",
        "",
        "[attack]",
        f"epsilon = {_fmt(a.epsilon)}",
        f"alpha = {_fmt(a.alpha)}",
        f"steps = {a.steps}",
        f"tau = {a.tau}",
        f"random_start = {a.random_start.value}",
        f"xi = {_fmt(a.xi)}",
        f"loss = {a.loss.value}",
        f"clamp_box = {_fmt_box(a.clamp_box)}",
        "",
        "[scheme]",
        f"family = {s.family.value}",
        f"lambda = {_fmt(s.lam)}",
        f"burn_in = {s.burn_in_epochs}",
    ]
    for name, e in cfg.evals:
        out += [
            "",
            f"[eval.{name}]",
            f"epsilon = {_fmt(e.epsilon)}",
            f"alpha = {_fmt(e.alpha)}",
            f"steps = {e.steps}",
            f"restarts = {e.restarts}",
            f"random_start = {e.random_start.value}",
            f"clamp_box = {_fmt_box(e.clamp_box)}",
        ]
    return "\n".join(out) + "\n"
