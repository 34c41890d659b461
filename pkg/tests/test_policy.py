import numpy as np
import pytest

from dispatchsim.model import GlobalState, project_osi
from dispatchsim.partition import scheduled_subset
from dispatchsim.policy import (MdpPolicy, PolicyDecisionInput, make_policy,
                                selfish_actions)

from conftest import build_instance


def decision_input(inst, k=0, queues=None, actions=None, transit=None,
                   delay=0, t=0):
    Mp1 = inst.config.num_servers + 1
    J = inst.config.num_job_types
    q = np.zeros((Mp1, J), dtype=np.int64)
    if queues:
        for (m, j), v in queues.items():
            q[m, j] = v
    if actions is None:
        actions = np.zeros((inst.config.num_aps, J), dtype=np.int64)
    gsi = GlobalState(transit or {}, actions, q)
    osi = project_osi(gsi, inst.topology, k)
    return PolicyDecisionInput(k, osi, delay, actions[k].copy(), t)


class TestStaticPolicy:
    def test_keeps_previous_actions(self):
        inst = build_instance(num_servers=2, candidate_servers=[[0, 1, 2]])
        pol = make_policy("static", inst)
        inp = decision_input(inst, actions=np.array([[2]]))
        assert pol.decide(inp).tolist() == [2]


class TestRandomPolicy:
    def test_single_candidate_is_forced(self):
        inst = build_instance(num_servers=1, candidate_servers=[[0]])
        pol = make_policy("random", inst, seed=0)
        inp = decision_input(inst)
        for _ in range(5):
            assert pol.decide(inp).tolist() == [0]

    def test_deterministic_under_fixed_seed(self):
        inst = build_instance(num_servers=2, candidate_servers=[[0, 1, 2]])
        draws = [make_policy("random", inst, seed=4).decide(decision_input(inst))
                 for _ in range(2)]
        assert draws[0].tolist() == draws[1].tolist()

    def test_choices_are_roughly_uniform(self):
        inst = build_instance(num_servers=2, candidate_servers=[[0, 1, 2]])
        pol = make_policy("random", inst, seed=1)
        inp = decision_input(inst)
        counts = np.zeros(3)
        n = 6000
        for _ in range(n):
            counts[int(pol.decide(inp)[0])] += 1
        chi2 = ((counts - n / 3) ** 2 / (n / 3)).sum()
        assert chi2 < 9.21        # chi-square, 2 dof, alpha = 0.01

    def test_output_stays_in_candidate_set(self):
        inst = build_instance(num_aps=2, num_servers=2,
                              candidate_servers=[[0, 2], [0, 1]])
        pol = make_policy("random", inst, seed=2)
        for k in range(2):
            for _ in range(20):
                out = pol.decide(decision_input(inst, k=k))
                assert int(out[0]) in inst.topology.candidate_servers[k]


class TestSelfishPolicy:
    def test_minimizes_upload_plus_processing(self):
        # u = [3, 10], c = [5, 2]: server 0 wins with 8 < 12
        inst = build_instance(num_servers=1,
                              latencies={(0, 0, 0): 3, (0, 1, 0): 10},
                              mean_proc=[[5.0], [2.0]], max_upload_latency=12)
        assert selfish_actions(inst).tolist() == [[0]]

    def test_collocated_speed_can_lose_to_fast_remote(self):
        # collocated u=0, c=4 against remote u=1, c=2
        inst = build_instance(num_servers=1, collocated=[(0, 1)],
                              latencies={(0, 0, 0): 1},
                              mean_proc=[[2.0], [4.0]])
        assert selfish_actions(inst).tolist() == [[0]]

    def test_ties_break_to_the_lower_index(self):
        inst = build_instance(num_servers=1,
                              latencies={(0, 0, 0): 2, (0, 1, 0): 2},
                              mean_proc=[[3.0], [3.0]])
        assert selfish_actions(inst).tolist() == [[0]]

    def test_scale_invariance(self):
        base = build_instance(num_servers=1,
                              latencies={(0, 0, 0): 3, (0, 1, 0): 10},
                              mean_proc=[[5.0], [2.0]], max_upload_latency=12)
        scaled = build_instance(num_servers=1,
                                latencies={(0, 0, 0): 6, (0, 1, 0): 20},
                                mean_proc=[[10.0], [4.0]],
                                max_upload_latency=24)
        assert selfish_actions(base).tolist() == selfish_actions(scaled).tolist()


class TestQueueAwarePolicy:
    def test_prefers_the_empty_queue(self):
        # identical u + c, observed queues 0 vs 5
        inst = build_instance(num_servers=2, candidate_servers=[[1, 2, 0]],
                              latencies={(0, 0, 0): 4, (0, 1, 0): 2,
                                         (0, 2, 0): 2},
                              mean_proc=[[9.0], [3.0], [3.0]])
        pol = make_policy("queue_aware", inst)
        out = pol.decide(decision_input(inst, queues={(1, 0): 5, (2, 0): 0}))
        assert out.tolist() == [2]

    def test_empty_queues_reduce_to_selfish(self):
        inst = build_instance(num_aps=2, num_servers=2,
                              candidate_servers=[[0, 1], [0, 1, 2]],
                              latencies={(0, 0, 0): 4, (0, 1, 0): 2,
                                         (1, 0, 0): 3, (1, 1, 0): 1,
                                         (1, 2, 0): 2},
                              mean_proc=[[2.0], [3.0], [4.0]])
        pol = make_policy("queue_aware", inst)
        selfish = selfish_actions(inst)
        for k in range(2):
            out = pol.decide(decision_input(inst, k=k))
            assert out.tolist() == selfish[k].tolist()

    def test_uses_the_observation_as_is(self):
        # identical OSIs give identical decisions regardless of latency
        inst = build_instance(num_servers=2, candidate_servers=[[0, 1, 2]])
        pol = make_policy("queue_aware", inst)
        a = pol.decide(decision_input(inst, queues={(1, 0): 3}, delay=0))
        b = pol.decide(decision_input(inst, queues={(1, 0): 3}, delay=1))
        assert a.tolist() == b.tolist()


class TestMdpPolicy:
    def two_server_instance(self):
        return build_instance(num_servers=2, candidate_servers=[[0, 1, 2]],
                              arrival_probs=[[0.2]],
                              latencies={(0, 0, 0): 3, (0, 1, 0): 2,
                                         (0, 2, 0): 2},
                              mean_proc=[[4.0], [3.0], [3.0]],
                              max_queue_len=4, overflow_penalty=50.0,
                              slots_per_interval=3, max_upload_latency=4)

    def test_counts_j_times_m_candidate_evaluations(self):
        inst = self.two_server_instance()
        pol = MdpPolicy(inst)
        pol.decide(decision_input(inst))
        assert pol.candidate_evaluations == 1 * 3    # J * |candidates|

    def test_avoids_the_saturated_queue(self):
        inst = self.two_server_instance()
        pol = MdpPolicy(inst)
        out = pol.decide(decision_input(inst, queues={(1, 0): 4},
                                        actions=np.array([[1]])))
        assert int(out[0]) != 1

    def test_symmetric_servers_tie_break_to_lower_index(self):
        inst = self.two_server_instance()
        pol = MdpPolicy(inst)
        out = pol.decide(decision_input(inst))
        # servers 1 and 2 are identical and both beat the slower cloud
        assert int(out[0]) == 1
        s = pol.last_scores
        assert s[(0, 1)] == pytest.approx(s[(0, 2)])
        assert s[(0, 1)] < s[(0, 0)]

    def test_update_schedule_follows_the_partition(self):
        inst = build_instance(num_aps=3, num_servers=2,
                              candidate_servers=[[0, 1], [0, 1, 2], [0, 2]])
        pol = MdpPolicy(inst)
        for t in range(2 * pol.partition.period):
            assert pol.update_set(t) == sorted(
                scheduled_subset(pol.partition, t))

    def test_single_candidate_keeps_the_incumbent(self):
        inst = build_instance(num_servers=1, candidate_servers=[[0]],
                              arrival_probs=[[0.3]])
        pol = MdpPolicy(inst)
        out = pol.decide(decision_input(inst))
        assert out.tolist() == [0]


def test_unknown_policy_name_rejected():
    inst = build_instance()
    with pytest.raises(ValueError):
        make_policy("greedy", inst)
