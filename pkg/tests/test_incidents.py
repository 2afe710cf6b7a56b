import json

import pytest
from hypothesis import given, strategies as st

from dilink.incidents import (
    Dataset,
    Incident,
    IncidentLink,
    LinkScope,
    LinkType,
    ParseError,
    Triplet,
    UnknownIncidentError,
    generate_triplets,
    link_scope,
    linked_pairs,
    parse_incident_file,
    temporal_split,
)


def make_incident(id, service="S1", workload="W1", created_at=1000, **kw):
    defaults = dict(
        title="db latency high",
        topology="region east ring 0",
        monitor_id="mon-1",
        failure_type="latency",
        severity=2,
    )
    defaults.update(kw)
    return Incident(
        id=id,
        owning_service=service,
        workload=workload,
        created_at=created_at,
        **defaults,
    )


def incident_line(id, severity=2, created_at=1000, service="S1", workload="W1"):
    return json.dumps(
        {
            "id": id,
            "title": "t",
            "topology": "tp",
            "monitor_id": "m",
            "failure_type": "f",
            "owning_service": service,
            "workload": workload,
            "severity": severity,
            "created_at": created_at,
        }
    )


class TestParsing:
    def test_three_valid_lines(self, tmp_path):
        path = tmp_path / "inc.jsonl"
        path.write_text("\n".join(incident_line(f"i{k}") for k in range(3)) + "\n")
        result = parse_incident_file(path)
        assert [i.id for i in result.incidents] == ["i0", "i1", "i2"]
        assert result.skipped_severity4 == 0

    def test_severity4_skipped_and_counted(self, tmp_path):
        lines = [incident_line(f"i{k}") for k in range(5)]
        lines[2] = incident_line("i2", severity=4)
        path = tmp_path / "inc.jsonl"
        path.write_text("\n".join(lines))
        result = parse_incident_file(path)
        assert len(result.incidents) == 4
        assert result.skipped_severity4 == 1

    def test_malformed_json_cites_line(self, tmp_path):
        path = tmp_path / "inc.jsonl"
        path.write_text('{"id": }\n')
        with pytest.raises(ParseError, match=":1:"):
            parse_incident_file(path)

    def test_missing_field_named(self, tmp_path):
        obj = json.loads(incident_line("i0"))
        del obj["workload"]
        path = tmp_path / "inc.jsonl"
        path.write_text(json.dumps(obj) + "\n")
        with pytest.raises(ParseError, match="workload"):
            parse_incident_file(path)

    def test_out_of_range_severity_is_an_error(self, tmp_path):
        path = tmp_path / "inc.jsonl"
        path.write_text(incident_line("i0", severity=7) + "\n")
        with pytest.raises(ParseError, match="severity"):
            parse_incident_file(path)


class TestDomainInvariants:
    def test_severity_validated(self):
        with pytest.raises(ValueError):
            make_incident("a", severity=4)

    def test_self_link_rejected(self):
        with pytest.raises(ValueError):
            IncidentLink("a", "a", LinkType.RELATED, 1)

    def test_triplet_ids_distinct(self):
        with pytest.raises(ValueError):
            Triplet("a", "a", "b")

    def test_dataset_checks_endpoints(self):
        incs = {"a": make_incident("a")}
        with pytest.raises(UnknownIncidentError):
            Dataset(incidents=incs, links=[IncidentLink("a", "ghost", LinkType.RELATED, 1)])


class TestTemporalSplit:
    def make_dataset(self, times):
        incs = {}
        links = []
        for k, t in enumerate(times):
            a, b = f"p{k}", f"c{k}"
            incs[a] = make_incident(a, created_at=t)
            incs[b] = make_incident(b, created_at=t)
            links.append(IncidentLink(a, b, LinkType.RELATED, t))
        return Dataset(incidents=incs, links=links)

    def test_basic_partition(self):
        train, test = temporal_split(self.make_dataset([10, 20, 30]), cutoff=25)
        assert [l.created_at for l in train] == [10, 20]
        assert [l.created_at for l in test] == [30]

    def test_cutoff_below_all(self):
        train, test = temporal_split(self.make_dataset([10, 20]), cutoff=5)
        assert train == [] and len(test) == 2

    def test_boundary_goes_to_test(self):
        train, test = temporal_split(self.make_dataset([25]), cutoff=25)
        assert train == [] and len(test) == 1

    @given(st.lists(st.integers(1, 10_000), min_size=1, max_size=30), st.integers(1, 10_000))
    def test_partition_exhaustive_and_disjoint(self, times, cutoff):
        ds = self.make_dataset(times)
        train, test = temporal_split(ds, cutoff)
        assert len(train) + len(test) == len(ds.links)
        assert all(l.created_at < cutoff for l in train)
        assert all(l.created_at >= cutoff for l in test)


class TestLinkScope:
    def scope_of(self, svc_a, wl_a, svc_b, wl_b):
        incs = {
            "a": make_incident("a", service=svc_a, workload=wl_a),
            "b": make_incident("b", service=svc_b, workload=wl_b),
        }
        return link_scope(IncidentLink("a", "b", LinkType.RELATED, 1), incs)

    def test_same_service(self):
        assert self.scope_of("S1", "W1", "S1", "W1") is LinkScope.WITHIN_SERVICE

    def test_cross_service_same_workload(self):
        assert self.scope_of("S1", "W1", "S2", "W1") is LinkScope.CROSS_SERVICE

    def test_cross_workload(self):
        assert self.scope_of("S1", "W1", "S2", "W4") is LinkScope.CROSS_WORKLOAD

    def test_unresolved_endpoint(self):
        with pytest.raises(UnknownIncidentError):
            link_scope(IncidentLink("a", "ghost", LinkType.RELATED, 1), {"a": make_incident("a")})

    def test_same_service_wins_over_workload_mismatch(self):
        assert self.scope_of("S1", "W1", "S1", "W2") is LinkScope.WITHIN_SERVICE


class TestGenerateTriplets:
    def world(self):
        incs = {
            "anchor": make_incident("anchor", service="S1", created_at=100_000),
            "pos": make_incident("pos", service="S2", created_at=100_600),
            "near": make_incident("near", service="S3", created_at=103_600),
            "far": make_incident("far", service="S3", created_at=120_000),
        }
        links = [IncidentLink("anchor", "pos", LinkType.RELATED, 100_700)]
        return incs, links

    def test_negative_forced_by_window(self):
        incs, links = self.world()
        result = generate_triplets(links, incs, negative_window=14_400, seed=3)
        assert [t.negative for t in result.triplets] == ["near"]
        assert result.dropped_no_negative == 0

    def test_no_eligible_negative_dropped_and_counted(self):
        incs, links = self.world()
        del incs["near"]
        del incs["far"]
        result = generate_triplets(links, incs, negative_window=14_400, seed=3)
        assert result.triplets == []
        assert result.dropped_no_negative == 1

    def same_service_world(self):
        incs = {}
        links = []
        for k in range(40):
            t = 100_000 + 60 * k
            incs[f"a{k}"] = make_incident(f"a{k}", service="S1", created_at=t)
            incs[f"b{k}"] = make_incident(f"b{k}", service="S1", created_at=t + 30)
            links.append(IncidentLink(f"a{k}", f"b{k}", LinkType.DUPLICATE, t + 30))
        return incs, links

    def test_downsample_one_keeps_every_pair(self):
        incs, links = self.same_service_world()
        result = generate_triplets(links, incs, downsample_same_service=1.0, seed=0)
        assert len(result.triplets) == len(links)
        assert result.downsampled_out == 0

    def test_downsample_zero_drops_all_within_service(self):
        incs, links = self.same_service_world()
        result = generate_triplets(links, incs, downsample_same_service=0.0, seed=0)
        assert result.triplets == []
        assert result.downsampled_out == len(links)

    def test_determinism(self):
        incs, links = self.same_service_world()
        a = generate_triplets(links, incs, downsample_same_service=0.5, seed=42)
        b = generate_triplets(links, incs, downsample_same_service=0.5, seed=42)
        assert a.triplets == b.triplets

    def test_triplet_validity_exhaustive(self):
        incs, links = self.same_service_world()
        result = generate_triplets(links, incs, downsample_same_service=1.0, seed=7)
        pairs = linked_pairs(links)
        for t in result.triplets:
            assert frozenset((t.anchor, t.positive)) in pairs
            assert frozenset((t.anchor, t.negative)) not in pairs
