"""
Freshness of shared data
========================

How the update cycle of a data holder turns into an average age of
information, and how that age compares with the provider's tolerance.
"""

import numpy as np

from freshcontract import TimingModel, aoi_slot_oracle, average_aoi, freshness_quality

# A slot is the time to ship one record and settle it: size / rate + consensus.
timing = TimingModel(data_size=4e6, transmission_rate=4e6, consensus_time=1.0)
print(f"slot length t = {timing.slot_length:.1f} s")

# The closed form and a slot-by-slot count agree for every integer cycle.
for theta in (1, 2, 5, 20):
    print(f"theta={theta:>2}: closed form {average_aoi(timing, theta):7.3f}"
          f"   enumerated {aoi_slot_oracle(timing, theta):7.3f}")

# Updating every cycle is not the freshest choice. The age is smallest
# near theta = sqrt(2), i.e. an update frequency of about 0.71.
thetas = np.linspace(1.0, 10.0, 901)
ages = np.array([average_aoi(timing, th) for th in thetas])
best = thetas[ages.argmin()]
print(f"freshest cycle theta = {best:.2f} (frequency {1 / best:.3f}), age {ages.min():.3f}")

# The provider compares the age with its tolerance; the ratio feeds satisfaction.
for max_aoi in (30.0, 60.0):
    q = freshness_quality(ages.min(), max_aoi)
    print(f"max tolerated age {max_aoi:.0f}: quality ratio {q:.2f}")
