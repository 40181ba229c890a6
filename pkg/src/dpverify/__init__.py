"""Statistical black-box testing of differential privacy for estimators with
continuous outputs.

The toolkit samples a mechanism on two adjacent sensor-data sequences,
summarizes where its outputs live (a high-likely set of per-step
ellipsoids), partitions that set into events, and runs an exact two-sided
hypothesis test on the event most likely to witness a privacy violation.
Accepted tests come with an explicit approximate-privacy budget.
"""

from .geometry import (DegenerateCloudError, DegenerateCloudWarning, Ellipsoid,
                       ellipsoid_contains, mvee, required_sample_count)
from .highlikely import (Event, EventList, HighLikelySet, NestedEvent,
                         NestedEventList, PartitionBoundError,
                         bounded_probability_partition,
                         estimate_high_likely_set, event_contains,
                         grid_partition)
from .mechanisms import (FunctionMechanism, GaussianReference, LaplaceReference,
                         Mechanism, OscillatorSystem, SensorNetwork,
                         TruncatedGaussianMixture, adjacent_sensor_pair,
                         make_dp_ekf, make_input_perturbation,
                         make_laplace_reference, make_network,
                         make_surrogate_mhe, observe_sequence,
                         sensor_data_distance, sensor_observe, simulate_target)
from .sampling import as_seed_sequence, generator, sample_runs, substream
from .stats import CountPair, PValuePair, binomial_thin, hypergeom_sf, pvalue
from .testkit import (AdjacencyWarning, ApproxDpBudget, SweepResult, TestConfig,
                      TestVerdict, approx_dp_budget, count_occurrences,
                      critical_epsilon_sweep, estimation_error,
                      hypothesis_test, run_test, worst_event_selector)

__version__ = "0.1.0"
