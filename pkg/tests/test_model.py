import json

import numpy as np
import pytest

from dispatchsim.model import (ArrivalModel, DispatchActionTable, GlobalState,
                               InvariantViolation, SystemConfig,
                               UploadLatencyModel, conflict_set, horizon_for,
                               instance_from_json, instance_to_json,
                               make_topology, project_osi, validate_actions,
                               validate_instance)

from conftest import build_instance, point_mass_pmf


class TestSystemConfig:
    def test_discount_must_be_inside_unit_interval(self):
        with pytest.raises(InvariantViolation):
            SystemConfig(1, 1, 1, 1, 1, 1, 0.0, 1.0, 1)
        with pytest.raises(InvariantViolation):
            SystemConfig(1, 1, 1, 1, 1, 1, 0.0, 0.0, 1)

    def test_counts_must_be_positive(self):
        with pytest.raises(InvariantViolation):
            SystemConfig(0, 1, 1, 1, 1, 1, 0.0, 0.5, 1)
        with pytest.raises(InvariantViolation):
            SystemConfig(1, 1, 1, 1, 0, 1, 0.0, 0.5, 1)

    def test_negative_penalty_rejected(self):
        with pytest.raises(InvariantViolation):
            SystemConfig(1, 1, 1, 1, 1, 1, -1.0, 0.5, 1)


def test_horizon_bound_is_tight():
    gamma, lmax, beta = 0.95, 50, 120.0
    h = horizon_for(gamma, lmax, beta)
    bound = (lmax + beta) / (1 - gamma)
    assert gamma ** (h + 1) * bound < 1e-3
    assert gamma ** h * bound >= 1e-3       # smallest such H


class TestTopology:
    def test_candidate_potential_duality(self):
        topo = make_topology([[0, 1], [0, 1, 2], [0, 2]], [], 2)
        for k, cand in enumerate(topo.candidate_servers):
            for m in cand:
                assert k in topo.potential_aps[m]
        for m, pot in enumerate(topo.potential_aps):
            for k in pot:
                assert m in topo.candidate_servers[k]

    def test_conflict_sets_exclude_cloud_sharing(self):
        # edge servers: AP0 -> {1}, AP1 -> {1,2}, AP2 -> {2}; cloud shared
        topo = make_topology([[0, 1], [0, 1, 2], [0, 2]], [], 2)
        assert conflict_set(topo, 0) == {0, 1}
        assert conflict_set(topo, 1) == {0, 1, 2}
        assert conflict_set(topo, 2) == {1, 2}

    def test_private_server_conflict_set_is_self(self):
        topo = make_topology([[0, 1], [0, 2]], [(0, 1), (1, 2)], 2)
        assert conflict_set(topo, 0) == {0}
        assert conflict_set(topo, 1) == {1}

    def test_conflict_membership_is_symmetric(self):
        topo = make_topology([[0, 1, 3], [0, 1, 2], [0, 2, 3]], [], 3)
        K = 3
        for a in range(K):
            for b in range(K):
                shared = ({m for m in topo.candidate_servers[a] if m != 0}
                          & {m for m in topo.candidate_servers[b] if m != 0})
                assert (b in topo.conflict_sets[a]) == (bool(shared) or a == b)
                assert (b in topo.conflict_sets[a]) == (a in topo.conflict_sets[b])


class TestValidateInstance:
    def test_consistent_three_ap_instance_accepted(self):
        inst = build_instance(num_aps=3, num_servers=2,
                              candidate_servers=[[0, 1], [0, 1, 2], [0, 2]])
        assert inst.config.num_aps == 3

    def test_action_outside_candidate_set_rejected(self):
        inst = build_instance(num_aps=3, num_servers=2,
                              candidate_servers=[[0, 1], [0, 1, 2], [0, 2]])
        bad = DispatchActionTable(np.array([[2], [0], [0]]))
        with pytest.raises(InvariantViolation):
            validate_actions(inst, bad)

    def test_unnormalized_pmf_rejected(self):
        inst = build_instance()
        pmf = inst.upload.pmf.copy()
        pmf[0, 0, 0] *= 0.98
        with pytest.raises(InvariantViolation):
            validate_instance(inst.config, inst.topology, inst.arrivals,
                              UploadLatencyModel(pmf), inst.service,
                              inst.signaling)

    def test_collocated_latency_must_be_zero(self):
        inst = build_instance(collocated=[(0, 1)])
        pmf = inst.upload.pmf.copy()
        pmf[0, 1, 0] = point_mass_pmf(1, inst.config.max_upload_latency)
        with pytest.raises(InvariantViolation):
            validate_instance(inst.config, inst.topology, inst.arrivals,
                              UploadLatencyModel(pmf), inst.service,
                              inst.signaling)

    def test_arrival_prob_above_one_rejected(self):
        inst = build_instance()
        with pytest.raises(InvariantViolation):
            validate_instance(inst.config, inst.topology,
                              ArrivalModel(np.array([[1.5]])), inst.upload,
                              inst.service, inst.signaling)

    def test_unsorted_trace_rejected(self):
        inst = build_instance()
        trace = {5: ((0, 0, 1),), 2: ((0, 0, 1),)}
        with pytest.raises(InvariantViolation):
            validate_instance(inst.config, inst.topology,
                              ArrivalModel(inst.arrivals.probs, trace),
                              inst.upload, inst.service, inst.signaling)


class TestUploadLatencyModel:
    def test_means_match_weighted_sum(self):
        inst = build_instance(latencies={(0, 0, 0): 3, (0, 1, 0): 2})
        support = np.arange(inst.config.max_upload_latency + 1)
        expect = np.einsum("kmjx,x->kmj", inst.upload.pmf, support)
        assert np.allclose(inst.upload.means, expect, atol=1e-9)

    def test_survival_is_reverse_cumulative(self):
        inst = build_instance(latencies={(0, 0, 0): 3})
        s = inst.upload.survival()[0, 0, 0]
        assert np.allclose(s[:4], 1.0)      # P(latency >= x) = 1 for x <= 3
        assert np.allclose(s[4:], 0.0)


class TestProjectOsi:
    def _gsi(self, inst, queues=None):
        Mp1, J = inst.config.num_servers + 1, inst.config.num_job_types
        q = np.zeros((Mp1, J), dtype=np.int64) if queues is None else queues
        actions = np.zeros((inst.config.num_aps, J), dtype=np.int64)
        return GlobalState({}, actions, q)

    def test_single_ap_view_covers_whole_state(self):
        inst = build_instance()
        gsi = self._gsi(inst)
        osi = project_osi(gsi, inst.topology, 0)
        assert osi.conflict_aps == {0}
        assert osi.servers == set(inst.topology.candidate_servers[0])

    def test_three_ap_projection_scopes_queues(self):
        inst = build_instance(num_aps=3, num_servers=2,
                              candidate_servers=[[0, 1], [0, 1, 2], [0, 2]])
        q = np.zeros((3, 1), dtype=np.int64)
        q[2, 0] = 7
        osi = project_osi(self._gsi(inst, q), inst.topology, 0)
        assert osi.conflict_aps == {0, 1}
        assert 2 not in osi.queues          # server 2 not a candidate of AP 0
        assert set(osi.queues) == {0, 1}

    def test_projection_is_pure(self):
        inst = build_instance(num_aps=3, num_servers=2,
                              candidate_servers=[[0, 1], [0, 1, 2], [0, 2]])
        gsi = self._gsi(inst)
        a = project_osi(gsi, inst.topology, 1)
        gsi.queues[1, 0] = 9
        gsi.queues[1, 0] = 0
        b = project_osi(gsi, inst.topology, 1)
        assert a.conflict_aps == b.conflict_aps
        assert all(np.array_equal(a.queues[m], b.queues[m]) for m in a.queues)


class TestJsonRoundTrip:
    def test_instance_round_trips(self):
        inst = build_instance(num_aps=2, num_servers=2, num_job_types=2,
                              collocated=[(0, 1)],
                              arrival_probs=[[0.1, 0.2], [0.0, 0.3]],
                              candidate_servers=[[0, 1], [0, 1, 2]])
        doc = instance_to_json(inst)
        again = instance_to_json(instance_from_json(json.loads(json.dumps(doc))))
        assert doc == again

    def test_trace_round_trips(self):
        trace = {0: ((0, 0, 2),), 3: ((0, 0, 1),)}
        inst = build_instance(trace=trace)
        loaded = instance_from_json(instance_to_json(inst))
        assert loaded.arrivals.trace == trace

    def test_unknown_schema_rejected(self):
        inst = build_instance()
        doc = instance_to_json(inst)
        doc["schema_version"] = 999
        with pytest.raises(InvariantViolation):
            instance_from_json(doc)


def test_transit_vector_counts_ages():
    gsi = GlobalState({(0, 1, 0): (2, 2, 5)}, np.zeros((1, 1), dtype=np.int64),
                      np.zeros((2, 1), dtype=np.int64))
    vec = gsi.transit_vector(0, 1, 0, 6)
    assert vec[2] == 2 and vec[5] == 1 and vec.sum() == 3
    assert gsi.jobs_in_flight() == 3
