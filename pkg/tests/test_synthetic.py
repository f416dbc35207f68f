import numpy as np
import pytest

from saedetect.flows import FlowAssembler
from saedetect.synthetic import (
    LabeledFlow,
    SyntheticDeviceProfile,
    corpus_packets,
    default_device_profiles,
    default_malicious_profiles,
    generate_dataset,
    read_labels_csv,
    write_labels_csv,
)


def profiles():
    return default_device_profiles()


class TestProfiles:
    def test_default_profiles_valid(self):
        for p in default_device_profiles() + default_malicious_profiles():
            p.validate()

    def test_nonpositive_sigma_rejected(self):
        p = SyntheticDeviceProfile("bad", 5.0, 0.0, 5.0, 0.2, 1.0, 0.5, 1)
        with pytest.raises(ValueError):
            p.validate()

    def test_nonpositive_rate_rejected(self):
        p = SyntheticDeviceProfile("bad", 5.0, 0.1, 5.0, 0.2, 0.0, 0.5, 1)
        with pytest.raises(ValueError):
            p.validate()

    def test_bad_geometric_p_rejected(self):
        p = SyntheticDeviceProfile("bad", 5.0, 0.1, 5.0, 0.2, 1.0, 1.5, 1)
        with pytest.raises(ValueError):
            p.validate()


class TestGenerateDataset:
    def test_counts(self):
        corpus = generate_dataset(profiles(), 1000, default_malicious_profiles(), 5000, seed=1)
        assert len(corpus) == 4 * 1000 + 5000
        assert sum(1 for lf in corpus if lf.label == "legit") == 4000
        assert sum(1 for lf in corpus if lf.label == "malicious") == 5000

    def test_determinism(self):
        a = generate_dataset(profiles(), 60, default_malicious_profiles(), 75, seed=9)
        b = generate_dataset(profiles(), 60, default_malicious_profiles(), 75, seed=9)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert x.label == y.label
            assert x.flow.flow_id == y.flow.flow_id
            assert x.flow.packets == y.flow.packets

    def test_different_seed_differs(self):
        a = generate_dataset(profiles(), 60, default_malicious_profiles(), 75, seed=9)
        b = generate_dataset(profiles(), 60, default_malicious_profiles(), 75, seed=10)
        assert any(x.flow.packets != y.flow.packets for x, y in zip(a, b))

    def test_flow_shape_invariants(self, small_corpus):
        for lf in small_corpus:
            flow = lf.flow
            assert flow.packets
            ts = [p.timestamp for p in flow.packets]
            assert ts == sorted(ts)
            assert flow.start_time == ts[0]
            assert flow.end_time == ts[-1]
            assert flow.initiator in (flow.key.endpoint_a, flow.key.endpoint_b)
            assert flow.direction_of(flow.packets[0]) == "S"
            for p in flow.packets:
                assert 1 <= p.payload_size <= 1500

    def test_flow_ids_unique(self, small_corpus):
        ids = [lf.flow.flow_id for lf in small_corpus]
        assert len(set(ids)) == len(ids)

    def test_too_few_flows_rejected(self):
        with pytest.raises(ValueError):
            generate_dataset(profiles(), 10, default_malicious_profiles(), 5, seed=1)

    def test_no_legit_profiles_rejected(self):
        with pytest.raises(ValueError):
            generate_dataset([], 100, default_malicious_profiles(), 5, seed=1)

    def test_separation_of_mean_sent_size(self, reference_corpus):
        # legitimate and malicious per-flow mean sent sizes differ by
        # at least 3 pooled standard deviations under the default profiles
        def flow_mean_sent(lf):
            sizes = [p.payload_size for p in lf.flow.packets if lf.flow.direction_of(p) == "S"]
            return float(np.mean(sizes))

        legit = np.array([flow_mean_sent(lf) for lf in reference_corpus if lf.label == "legit"])
        mal = np.array([flow_mean_sent(lf) for lf in reference_corpus if lf.label == "malicious"])
        pooled = np.sqrt((legit.var() + mal.var()) / 2)
        assert abs(legit.mean() - mal.mean()) >= 3 * pooled

    def test_corpus_packets_time_ordered_and_assemblable(self, small_corpus):
        packets = corpus_packets(small_corpus)
        ts = [p.timestamp for p in packets]
        assert ts == sorted(ts)
        asm = FlowAssembler(timeout=60.0)
        flows = asm.assemble(packets)
        assert asm.tally.rejected == 0
        assert len(flows) == len(small_corpus)


class TestLabelsCsv:
    def test_roundtrip(self, tmp_path, small_corpus):
        path = tmp_path / "labels.csv"
        write_labels_csv(path, small_corpus)
        table = read_labels_csv(path)
        assert len(table) == len(small_corpus)
        lf = small_corpus[0]
        assert table[lf.flow.flow_id] == (lf.label, lf.device)
