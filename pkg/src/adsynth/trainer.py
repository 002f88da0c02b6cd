"""Two-stage fine-tuning of three pluggable classifier backends, checkpoint
selection by validation accuracy, and majority-vote ensemble inference.

Real pretrained-encoder backends plug in as adapters registered under a
backend name; the shipped ``toy`` backend is a deterministic,
dependency-free class-conditional token-frequency scorer used by the tests
and the smoke pipeline, so nothing here ever needs a GPU or a model
download.
"""

from __future__ import annotations

import json
import math
import re
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .corpus import DatasetSplit, LabeledSentence, TrainingStage, combine
from .textproc import tokens

__all__ = [
    "TrainConfig",
    "PRESETS",
    "ClassifierBackend",
    "ToyBackend",
    "TrainedMember",
    "EnsembleModel",
    "ExperimentPlan",
    "make_backend",
    "register_backend",
    "fine_tune_stages",
    "train_ensemble",
    "ensemble_predict",
    "majority_vote",
    "save_member",
    "load_member",
]

TASKS = ("binary", "multiclass")


class TrainerError(Exception):
    pass


class EmptyStage(TrainerError):
    pass


class BackendFailure(TrainerError):
    pass


class BackendConfigError(TrainerError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 1e-4
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-6
    warmup_steps: int = 200
    weight_decay: float = 0.01
    seed: int = 0
    # Optional per-stage epoch overrides, e.g. {"bronze": 3}.
    stage_epochs: Mapping[str, int] | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")

    def epochs_for(self, stage_name: str) -> int:
        if self.stage_epochs and stage_name in self.stage_epochs:
            return self.stage_epochs[stage_name]
        return self.epochs


# Two published hyperparameter sets exist for this setup; neither is claimed
# as canonical, so both ship as named presets.
PRESETS: dict[str, TrainConfig] = {
    "body": TrainConfig(learning_rate=1e-4, batch_size=32),
    "appendix": TrainConfig(learning_rate=1e-3, batch_size=32),
}


class ClassifierBackend(ABC):
    """Trainable sentence classifier with snapshotable state.

    ``train_epoch`` continues training from the current parameters, which is
    what makes staged (synthetic then gold) fine-tuning work.
    """

    backend_id: str = "backend"
    max_sequence_length: int = 4096

    @abstractmethod
    def reset(self, classes: Sequence[int], seed: int) -> None: ...

    @abstractmethod
    def train_epoch(self, items: Sequence[LabeledSentence], config: TrainConfig) -> None: ...

    @abstractmethod
    def predict(self, sentences: Sequence[str]) -> list[int]: ...

    @abstractmethod
    def export_state(self) -> dict: ...

    @abstractmethod
    def load_state(self, state: dict) -> None: ...

    @property
    def num_classes(self) -> int:
        return len(getattr(self, "classes", ()))


class ToyBackend(ClassifierBackend):
    """Class-conditional token frequency scorer with additive smoothing.

    Deterministic given its inputs; the smoothing strength ``alpha`` is the
    knob used to derive three distinct ensemble members from one
    implementation.
    """

    def __init__(self, backend_id: str = "toy", alpha: float = 1.0):
        if alpha <= 0:
            raise BackendConfigError("alpha must be positive")
        self.backend_id = backend_id
        self.alpha = alpha
        self.classes: tuple[int, ...] = ()
        self._token_counts: dict[int, Counter] = {}
        self._class_docs: dict[int, int] = {}
        self._class_tokens: dict[int, int] = {}
        self._vocab: set[str] = set()

    def reset(self, classes: Sequence[int], seed: int) -> None:
        self.classes = tuple(sorted(set(classes)))
        if not self.classes:
            raise BackendConfigError("no classes to train over")
        self._token_counts = {c: Counter() for c in self.classes}
        self._class_docs = {c: 0 for c in self.classes}
        self._class_tokens = {c: 0 for c in self.classes}
        self._vocab = set()

    def train_epoch(self, items: Sequence[LabeledSentence], config: TrainConfig) -> None:
        if not items:
            raise EmptyStage("no training items")
        for item in items:
            if item.class_id not in self._token_counts:
                raise BackendFailure(f"label {item.class_id} outside configured classes {self.classes}")
            toks = tokens(item.text)
            self._token_counts[item.class_id].update(toks)
            self._class_tokens[item.class_id] += len(toks)
            self._class_docs[item.class_id] += 1
            self._vocab.update(toks)

    def _score(self, class_id: int, toks: list[str], total_docs: int, vocab_size: int) -> float:
        prior = (self._class_docs[class_id] + 1.0) / (total_docs + len(self.classes))
        score = math.log(prior)
        denom = self._class_tokens[class_id] + self.alpha * vocab_size
        counts = self._token_counts[class_id]
        for tok in toks:
            score += math.log((counts[tok] + self.alpha) / denom)
        return score

    def predict(self, sentences: Sequence[str]) -> list[int]:
        total_docs = sum(self._class_docs.values())
        vocab_size = len(self._vocab) + 1
        out: list[int] = []
        for sentence in sentences:
            toks = tokens(sentence)
            best = min(self.classes)
            best_score = -math.inf
            for class_id in self.classes:
                score = self._score(class_id, toks, total_docs, vocab_size)
                if score > best_score:
                    best, best_score = class_id, score
            out.append(best)
        return out

    def export_state(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "alpha": self.alpha,
            "classes": list(self.classes),
            "token_counts": {str(c): dict(counter) for c, counter in self._token_counts.items()},
            "class_docs": {str(c): n for c, n in self._class_docs.items()},
            "class_tokens": {str(c): n for c, n in self._class_tokens.items()},
            "vocab": sorted(self._vocab),
        }

    def load_state(self, state: dict) -> None:
        self.alpha = state["alpha"]
        self.classes = tuple(state["classes"])
        self._token_counts = {int(c): Counter(counts) for c, counts in state["token_counts"].items()}
        self._class_docs = {int(c): n for c, n in state["class_docs"].items()}
        self._class_tokens = {int(c): n for c, n in state["class_tokens"].items()}
        self._vocab = set(state["vocab"])


BackendFactory = Callable[[str, dict], ClassifierBackend]


def _toy_factory(backend_id: str, params: dict) -> ToyBackend:
    return ToyBackend(backend_id=backend_id, alpha=float(params.get("alpha", 1.0)))


_REGISTRY: dict[str, BackendFactory] = {"toy": _toy_factory}


def register_backend(name: str, factory: BackendFactory) -> None:
    """Register an adapter so config files can refer to it by name."""
    _REGISTRY[name] = factory


def make_backend(spec: str) -> ClassifierBackend:
    """Build a backend from a spec string like ``toy`` or ``toy:alpha=0.5``."""
    name, _, param_text = spec.partition(":")
    params: dict[str, str] = {}
    if param_text:
        for pair in param_text.split(","):
            key, _, value = pair.partition("=")
            if not key or not value:
                raise BackendConfigError(f"bad backend parameter {pair!r} in {spec!r}")
            params[key.strip()] = value.strip()
    factory = _REGISTRY.get(name.strip())
    if factory is None:
        raise BackendConfigError(f"unknown backend {name!r} (registered: {sorted(_REGISTRY)})")
    return factory(spec, params)


@dataclass
class TrainedMember:
    backend: ClassifierBackend
    stage_log: list[str]
    best_epoch: int
    val_accuracy: float


@dataclass
class EnsembleModel:
    members: list[TrainedMember]
    task: str
    stage_log: list[str]


@dataclass(frozen=True)
class ExperimentPlan:
    task: str
    combination: str
    backends: tuple[str, ...]
    preset: str = "body"

    def __post_init__(self):
        if self.task not in TASKS:
            raise TrainerError(f"task {self.task!r} not one of {TASKS}")

    def cell_name(self) -> str:
        return f"{self.task}_{re.sub(r'[^A-Za-z0-9]+', '', self.combination)}"


def _accuracy(predictions: Sequence[int], golds: Sequence[int]) -> float:
    if not golds:
        raise TrainerError("empty validation set")
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)


def fine_tune_stages(
    backend: ClassifierBackend,
    stages: Sequence[TrainingStage],
    val: Sequence[LabeledSentence],
    config: TrainConfig,
) -> TrainedMember:
    """Train through the staged curriculum and keep the best gold checkpoint.

    Synthetic stages run their full epoch budget; during the final (gold)
    stage the model is evaluated on the validation set after every epoch and
    the checkpoint with the highest validation accuracy (earliest on ties) is
    restored before returning.
    """
    if not stages:
        raise EmptyStage("no training stages")
    if stages[-1].name != "gold":
        raise TrainerError(f"last stage must be gold, got {stages[-1].name!r}")
    for stage in stages:
        if not stage.items:
            raise EmptyStage(f"stage {stage.name!r} is empty")
    classes = sorted({item.class_id for stage in stages for item in stage.items} | {v.class_id for v in val})
    try:
        backend.reset(classes, config.seed)
        stage_log: list[str] = []
        for stage in stages[:-1]:
            for _ in range(config.epochs_for(stage.name)):
                backend.train_epoch(stage.items, config)
            stage_log.append(stage.name)
        gold = stages[-1]
        val_texts = [item.text for item in val]
        val_labels = [item.class_id for item in val]
        best_accuracy = -1.0
        best_epoch = 0
        best_state: dict | None = None
        for epoch in range(1, config.epochs_for("gold") + 1):
            backend.train_epoch(gold.items, config)
            accuracy = _accuracy(backend.predict(val_texts), val_labels)
            if accuracy > best_accuracy:
                best_accuracy = accuracy
                best_epoch = epoch
                best_state = backend.export_state()
        stage_log.append("gold")
        backend.load_state(best_state)
    except (EmptyStage, TrainerError):
        raise
    except Exception as exc:
        raise BackendFailure(f"backend {backend.backend_id!r} failed: {exc}") from exc
    return TrainedMember(backend=backend, stage_log=stage_log, best_epoch=best_epoch, val_accuracy=best_accuracy)


def train_ensemble(
    plan: ExperimentPlan,
    stages: Sequence[TrainingStage],
    val: Sequence[LabeledSentence],
    config: TrainConfig,
) -> EnsembleModel:
    """Train the three configured backends on identical staged data."""
    if len(plan.backends) != 3:
        raise BackendConfigError(f"exactly 3 backends required, got {len(plan.backends)}")
    members = [
        fine_tune_stages(make_backend(spec), stages, val, config) for spec in plan.backends
    ]
    return EnsembleModel(members=members, task=plan.task, stage_log=list(members[0].stage_log))


def majority_vote(votes: Sequence[int]) -> int:
    """Plurality with >= 2 votes; full disagreement falls back to the
    first-configured member's vote."""
    counts = Counter(votes)
    winner, count = counts.most_common(1)[0]
    if count >= 2:
        return winner
    return votes[0]


def ensemble_predict(model: EnsembleModel, sentences: Sequence[str]) -> list[int]:
    member_votes = [member.backend.predict(sentences) for member in model.members]
    return [majority_vote(votes) for votes in zip(*member_votes)]


def stages_for_plan(
    plan: ExperimentPlan,
    gold: DatasetSplit,
    bronze: Sequence[LabeledSentence] | None = None,
    silver: Sequence[LabeledSentence] | None = None,
) -> list[TrainingStage]:
    """Convenience wrapper mapping a plan's combination onto training stages."""
    return combine(gold, plan.combination, bronze=bronze, silver=silver)


def save_member(member: TrainedMember, directory: Path | str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    metadata = {
        "backend_id": member.backend.backend_id,
        "stage_log": member.stage_log,
        "best_epoch": member.best_epoch,
        "val_accuracy": member.val_accuracy,
    }
    with open(directory / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(directory / "state.json", "w", encoding="utf-8") as fh:
        json.dump(member.backend.export_state(), fh, sort_keys=True)
        fh.write("\n")


def load_member(directory: Path | str) -> TrainedMember:
    directory = Path(directory)
    with open(directory / "metadata.json", encoding="utf-8") as fh:
        metadata = json.load(fh)
    with open(directory / "state.json", encoding="utf-8") as fh:
        state = json.load(fh)
    backend = make_backend(metadata["backend_id"])
    backend.load_state(state)
    return TrainedMember(
        backend=backend,
        stage_log=list(metadata["stage_log"]),
        best_epoch=metadata["best_epoch"],
        val_accuracy=metadata["val_accuracy"],
    )
