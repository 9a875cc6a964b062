"""
Configuration du pipeline : dataclasses typées + fichier texte "clé = valeur"

Priorité : valeurs par défaut < fichier de configuration < options CLI.
Les sous-configurations utilisent les préfixes reg., seg. et phantom.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Union, get_args, get_origin, get_type_hints

from ..errors import InvalidParameterError
from ..phantom.generator import PhantomSpec
from ..registration.engine import RegConfig
from ..segmentation.voxel_net import SegConfig

logger = logging.getLogger(__name__)

STYLE_MODES = ("wist", "ist", "none")
SECTIONS = {"reg": RegConfig, "seg": SegConfig, "phantom": PhantomSpec}
ALIASES = {"lambda": "lam", "n": "wist_n", "out": "output_dir"}
TRUE_WORDS = {"true", "yes", "1", "on"}
FALSE_WORDS = {"false", "no", "0", "off"}


@dataclass
class PipelineConfig:
    """Calendrier d'entraînement itératif et chemins des données"""
    iterations: int = 3
    style: str = "wist"
    wist_n: int = 10
    lam: float = 0.5
    use_cgd: bool = True
    augment_probability: float = 0.5
    atlas: str = ""
    atlas_labels: str = ""
    unlabeled: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)
    test_labels: List[str] = field(default_factory=list)
    output_dir: str = "runs/latest"
    seed: int = 0
    threads: int = 1
    num_classes: int = 0
    persist_intermediate: bool = False
    reg: RegConfig = field(default_factory=RegConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidParameterError("iterations doit être >= 1")
        if self.style not in STYLE_MODES:
            raise InvalidParameterError(f"style inconnu: {self.style} (attendu {STYLE_MODES})")
        if self.wist_n < 1:
            raise InvalidParameterError("N (wist_n) doit être >= 1")
        if self.lam < 0:
            raise InvalidParameterError("λ doit être >= 0")
        if not 0.0 <= self.augment_probability <= 1.0:
            raise InvalidParameterError("augment_probability doit être dans [0, 1]")
        if self.threads < 1:
            raise InvalidParameterError("threads doit être >= 1")
        if len(self.test_labels) not in (0, len(self.test)):
            raise InvalidParameterError("test et test_labels doivent avoir la même longueur")


def _coerce(raw: str, hint, key: str):
    origin = get_origin(hint)
    args = get_args(hint)
    text = raw.strip()
    try:
        if origin is Union:
            if text.lower() in ("none", ""):
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _coerce(text, inner, key)
        if hint is bool:
            lowered = text.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        if origin in (list, List):
            return [item.strip() for item in text.split(",") if item.strip()]
        if origin is tuple:
            items = [item.strip() for item in text.split(",") if item.strip()]
            item_type = args[0]
            if len(args) != 2 or args[1] is not Ellipsis:
                if len(items) != len(args):
                    raise ValueError(f"{len(args)} valeurs attendues")
            return tuple(item_type(item) for item in items)
    except (ValueError, TypeError) as e:
        raise InvalidParameterError(f"clé {key}: valeur invalide {raw!r} ({e})") from e
    raise InvalidParameterError(f"clé {key}: type non pris en charge {hint}")


def _split_key(key: str):
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise InvalidParameterError(f"clé inconnue: {key}")
        return section, ALIASES.get(name, name)
    return None, ALIASES.get(key, key)


def apply_overrides(cfg: PipelineConfig, overrides: Mapping[str, Any]) -> PipelineConfig:
    """
    Applique des valeurs (texte ou déjà typées) et revalide les dataclasses

    Raises:
        InvalidParameterError: clé inconnue ou valeur non convertible
    """
    top: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    top_hints = get_type_hints(PipelineConfig)

    for key, value in overrides.items():
        section, name = _split_key(key)
        cls = SECTIONS[section] if section else PipelineConfig
        hints = get_type_hints(cls) if section else top_hints
        if name not in hints or (section is None and name in SECTIONS):
            raise InvalidParameterError(f"clé inconnue: {key}")
        if isinstance(value, str):
            value = _coerce(value, hints[name], key)
        (nested[section] if section else top)[name] = value

    for section, updates in nested.items():
        if updates:
            top[section] = replace(getattr(cfg, section), **updates)
    return replace(cfg, **top) if top else cfg


def parse_config_text(text: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"ligne {number}: 'clé = valeur' attendu")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: Union[str, Path], base: PipelineConfig = None) -> PipelineConfig:
    """Charge un fichier clé = valeur par-dessus base (ou les valeurs par défaut)"""
    text = Path(path).read_text(encoding="utf-8")
    cfg = apply_overrides(base or PipelineConfig(), parse_config_text(text))
    logger.info(f"✅ Configuration chargée depuis {path}")
    return cfg


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def dump_config(cfg: PipelineConfig) -> str:
    """Instantané rechargeable par load_config"""
    lines = ["# configuration du pipeline (clé = valeur)"]
    for f in fields(cfg):
        if f.name in SECTIONS:
            continue
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    for section in SECTIONS:
        lines.append("")
        sub = getattr(cfg, section)
        for f in fields(sub):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"
