"""Shared builders for small hand-constructed instances."""

import numpy as np
import pytest

from dispatchsim.model import (ArrivalModel, ServiceModel,
                               SignalingLatencyModel, SystemConfig,
                               UploadLatencyModel, horizon_for, make_topology,
                               validate_instance)


def point_mass_pmf(latency: int, max_latency: int) -> np.ndarray:
    p = np.zeros(max_latency + 1)
    p[latency] = 1.0
    return p


def build_instance(num_aps=1, num_servers=1, num_job_types=1,
                   slots_per_interval=2, max_upload_latency=4, max_queue_len=5,
                   overflow_penalty=10.0, discount=0.9,
                   candidate_servers=None, collocated=(),
                   arrival_probs=None, trace=None, latencies=None,
                   mean_proc=None, signaling_slot=0):
    """Hand-built instance with point-mass upload latencies.

    ``latencies[(k, m, j)]`` gives the deterministic latency of a route
    (default: 1 slot, or 0 for collocated pairs).  Anything not supplied
    gets a simple default so tiny tests stay terse.
    """
    K, M, J = num_aps, num_servers, num_job_types
    t_b, xi = slots_per_interval, max_upload_latency
    if candidate_servers is None:
        candidate_servers = [list(range(M + 1)) for _ in range(K)]
    topo = make_topology(candidate_servers, collocated, M)

    if arrival_probs is None:
        arrival_probs = np.zeros((K, J))
    probs = np.asarray(arrival_probs, dtype=float).reshape(K, J)

    pmf = np.zeros((K, M + 1, J, xi + 1))
    for k in range(K):
        for m in range(M + 1):
            for j in range(J):
                if topo.is_collocated(k, m):
                    lat = 0
                elif latencies and (k, m, j) in latencies:
                    lat = latencies[(k, m, j)]
                else:
                    lat = 1
                pmf[k, m, j] = point_mass_pmf(lat, xi)

    if mean_proc is None:
        mean_proc = np.full((M + 1, J), 2.0)
    proc = np.asarray(mean_proc, dtype=float).reshape(M + 1, J)

    sig = np.zeros((K, t_b))
    sig[:, signaling_slot] = 1.0

    config = SystemConfig(
        num_aps=K, num_servers=M, num_job_types=J,
        slots_per_interval=t_b, max_upload_latency=xi,
        max_queue_len=max_queue_len, overflow_penalty=overflow_penalty,
        discount=discount,
        horizon_intervals=horizon_for(discount, max_queue_len, overflow_penalty))
    return validate_instance(config, topo, ArrivalModel(probs, trace),
                             UploadLatencyModel(pmf), ServiceModel(proc),
                             SignalingLatencyModel(sig))


@pytest.fixture
def tiny_instance():
    """K=1, M=1 (collocated), J=1; low load, short intervals."""
    return build_instance(collocated=[(0, 1)], arrival_probs=[[0.2]],
                          latencies={(0, 0, 0): 3},
                          mean_proc=[[4.0], [2.0]])
