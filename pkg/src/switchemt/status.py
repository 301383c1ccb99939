from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping


@dataclass(frozen=True)
class SwitchStatusSet:
    """On/Off status of every switch in a circuit plus the epoch counter.

    Equality and hashing ignore the epoch, so two sets compare equal when the
    same switches conduct.
    """

    names: tuple[str, ...]
    on: frozenset[str] = frozenset()
    epoch: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "on", frozenset(self.on))
        unknown = self.on - set(self.names)
        if unknown:
            raise ValueError(f"unknown switch(es) {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, statuses: Mapping[str, bool], epoch: int = 0) -> "SwitchStatusSet":
        return cls(tuple(statuses), frozenset(k for k, v in statuses.items() if v), epoch)

    def is_on(self, name: str) -> bool:
        if name not in self.names:
            raise KeyError(name)
        return name in self.on

    def as_dict(self) -> dict[str, bool]:
        return {n: n in self.on for n in self.names}

    def replace(self, on: Iterable[str], epoch: int | None = None) -> "SwitchStatusSet":
        return SwitchStatusSet(self.names, frozenset(on), self.epoch if epoch is None else epoch)

    def changed(self, other: "SwitchStatusSet") -> tuple[str, ...]:
        return tuple(n for n in self.names if (n in self.on) != (n in other.on))

    def __str__(self) -> str:
        return "{" + ", ".join(f"{n}={'On' if n in self.on else 'Off'}" for n in self.names) + "}"
