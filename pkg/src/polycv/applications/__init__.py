from .benchmarks import Benchmark, benchmark_suite, get_benchmark
from .scattering import PointLightScene, single_scattering_integrand, single_scattering_reference
from .transmittance import (
    ControlExtinction,
    Medium,
    constant_control,
    get_medium,
    media,
    optical_depth_cv,
    tau_oracle,
    transmittance_adaptive_rrt,
    transmittance_delta_tracking,
    transmittance_ratio_tracking,
)
