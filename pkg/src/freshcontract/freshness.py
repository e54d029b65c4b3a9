"""Time-slotted Age-of-Information model and the freshness quality metric."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TimingModel:
    """Constants that fix the length of one time slot.

    ``slot_length`` is recomputed on every access, so it can never go stale.
    """

    data_size: float
    transmission_rate: float
    consensus_time: float = 0.0

    def __post_init__(self):
        if not self.data_size > 0:
            raise ValueError(f"data_size must be positive, got {self.data_size}")
        if not self.transmission_rate > 0:
            raise ValueError(
                f"transmission_rate must be positive, got {self.transmission_rate}"
            )
        if not self.consensus_time >= 0:
            raise ValueError(
                f"consensus_time must be non-negative, got {self.consensus_time}"
            )

    @property
    def transmission_time(self) -> float:
        return self.data_size / self.transmission_rate

    @property
    def slot_length(self) -> float:
        return self.data_size / self.transmission_rate + self.consensus_time

    @classmethod
    def from_slot_length(cls, t: float) -> "TimingModel":
        """Timing whose slot length is exactly ``t`` (unit rate, no consensus)."""
        return cls(data_size=t, transmission_rate=1.0, consensus_time=0.0)


def _check_cycle(theta):
    if not theta >= 1:
        raise ValueError(f"cycle length must be >= 1 slot, got {theta}")


def average_aoi(timing: TimingModel, theta: float) -> float:
    """Average AoI over an update cycle of ``theta`` slots.

    ``theta`` may be real-valued; the contract layer evaluates the closed
    form at ``theta = 1/f`` for continuous update frequencies.
    """
    _check_cycle(theta)
    t = timing.slot_length
    return t * (1.0 / theta + theta / 2.0 + 0.5)


def aoi_slot_oracle(timing: TimingModel, theta: int) -> float:
    """Average AoI by enumerating every request slot of the cycle.

    The first and last slots have age ``2t``; an interior slot ``i`` has
    age ``(i + 1) t``. Requests are uniform over the cycle.
    """
    _check_cycle(theta)
    if int(theta) != theta:
        raise ValueError(f"slot oracle needs an integer cycle length, got {theta}")
    theta = int(theta)
    ages = [2 if i in (1, theta) else i + 1 for i in range(1, theta + 1)]
    return timing.slot_length * sum(ages) / theta


def freshness_quality(aoi: float, max_aoi: float) -> float:
    """Quality ratio ``max_aoi / aoi``; above 1 means fresher than tolerated."""
    if not aoi > 0:
        raise ValueError(f"aoi must be positive, got {aoi}")
    if not max_aoi > 0:
        raise ValueError(f"max_aoi must be positive, got {max_aoi}")
    return max_aoi / aoi
