"""Experiment configuration (one INI-style text file) and seed derivation.

Sections::

    [run]        seed, workers
    [data]       examples, frames, noise_std, silence_prob, silence_len (bins defaults to input_bins)
    [class NAME] bands = "center width intensity; ...", transient = "sharpness intensity", seg_len
    [model], [layer1], [layer2], ...   architecture (see model.parse_arch)
    [train]      epochs, batch_size, lr
    [gradnap]    group_by, window, mask, reduction, sensitivity, include_silence
    [featviz]    layers, top_k
    [scheme NAME]  class = group lines; an extra grouping compared in the report
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .data import ClassSpec
from .errors import ConfigError
from .model import TrainConfig, parse_arch
from .netcore import ArchitectureSpec


def derive_seed(master: int, stage: str) -> int:
    """Stable per-stage seed: first 8 bytes of sha256("master:stage")."""
    digest = hashlib.sha256(f"{master}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


@dataclass
class DataConfig:
    classes: list
    examples: int = 80
    frames: int = 100
    bins: int = 32
    noise_std: float = 1.0
    silence_prob: float = 0.25
    silence_len: tuple = (3, 8)


@dataclass
class GradnapConfig:
    group_by: str = "predicted"
    window: int = 0  # input frames; 0 means the full receptive field
    mask: str = "absmax"
    reduction: str = "sum"
    sensitivity: str = "logit"
    include_silence: bool = False


@dataclass
class RunConfig:
    seed: int
    workers: int
    data: DataConfig
    arch: ArchitectureSpec
    train: TrainConfig
    gradnap: GradnapConfig
    featviz_layers: list
    top_k: int
    schemes: dict = field(default_factory=dict)
    text: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def _ints(s: str) -> tuple:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _parse_class(name: str, sec) -> ClassSpec:
    bands = []
    for chunk in sec.get("bands", "").split(";"):
        if chunk.strip():
            c, w, i = chunk.split()
            bands.append((int(c), int(w), float(i)))
    transient = None
    if sec.get("transient"):
        sharp, inten = sec["transient"].split()
        transient = (float(sharp), float(inten))
    seg_len = _ints(sec.get("seg_len", "8 16"))
    return ClassSpec(name, bands, transient, seg_len)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # scheme sections map case-sensitive class names
    try:
        cp.read_string(text)
        arch = parse_arch(text)
        classes = [
            _parse_class(s.split(None, 1)[1].strip(), cp[s])
            for s in cp.sections() if s.startswith("class ")
        ]
        if not classes:
            raise ConfigError("config defines no [class NAME] sections")
        d = cp["data"] if cp.has_section("data") else {}
        run = cp["run"] if cp.has_section("run") else {}
        data = DataConfig(
            classes,
            examples=int(d.get("examples", 80)),
            frames=int(d.get("frames", 100)),
            bins=int(d.get("bins", arch.input_bins)),
            noise_std=float(d.get("noise_std", 1.0)),
            silence_prob=float(d.get("silence_prob", 0.25)),
            silence_len=_ints(d.get("silence_len", "3 8")),
        )
        t = cp["train"] if cp.has_section("train") else {}
        g = cp["gradnap"] if cp.has_section("gradnap") else {}
        f = cp["featviz"] if cp.has_section("featviz") else {}
        seed = int(run.get("seed", 0))
        train = TrainConfig(int(t.get("epochs", 40)), int(t.get("batch_size", 8)),
                            float(t.get("lr", 0.03)), derive_seed(seed, "train"))
        gradnap = GradnapConfig(
            group_by=g.get("group_by", "predicted"),
            window=int(g.get("window", 0)),
            mask=g.get("mask", "absmax"),
            reduction=g.get("reduction", "sum"),
            sensitivity=g.get("sensitivity", "logit"),
            include_silence=str(g.get("include_silence", "no")).lower() in ("1", "yes", "true", "on"),
        )
        schemes = {
            s.split(None, 1)[1].strip(): dict(cp[s])
            for s in cp.sections() if s.startswith("scheme ")
        }
        featviz_layers = list(_ints(f.get("layers", "2")))
    except (configparser.Error, ValueError, KeyError, IndexError) as e:
        raise ConfigError(f"config: {e}") from None
    if gradnap.group_by not in ("predicted", "true"):
        raise ConfigError("config [gradnap] group_by must be 'predicted' or 'true'")
    for l in featviz_layers:
        if not 1 <= l <= arch.num_layers:
            raise ConfigError(f"config [featviz] layer {l} outside 1..{arch.num_layers}")
    return RunConfig(seed, int(run.get("workers", 1)), data, arch, train, gradnap,
                     featviz_layers, int(f.get("top_k", 5)), schemes, text)


def load_config(path=None) -> RunConfig:
    """Read a config file; None loads the bundled toy experiment."""
    if path is None:
        text = resources.files("gradnap").joinpath("toy.ini").read_text()
    else:
        text = Path(path).read_text()
    return parse_config(text)


def default_config_text() -> str:
    return resources.files("gradnap").joinpath("toy.ini").read_text()
