import gzip
import os
import random
import urllib.error

import pytest

from silkforge.errors import (
    ConfigError,
    FormatError,
    NetworkError,
    StateError,
    TooShortError,
    ValidationError,
)
from silkforge.seqdata import (
    AminoAcidSequence,
    BackgroundDistribution,
    MASP_BACKGROUND,
    MinMaxScaler,
    PropertyVector,
    background_frequencies,
    build_uniprot_url,
    extract_repeat_region,
    fetch_uniprot,
    make_folds,
    parse_fasta,
    read_properties_tsv,
    write_fasta,
    write_properties_tsv,
)

SIGMA = "ARNDCQEGHILKMFPSTWYV"


def random_seq(rng, lo=1, hi=80):
    return "".join(rng.choice(SIGMA) for _ in range(rng.randint(lo, hi)))


class TestAminoAcidSequence:
    def test_valid(self):
        seq = AminoAcidSequence("GGA")
        assert str(seq) == "GGA" and len(seq) == 3

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            AminoAcidSequence("")

    def test_bad_symbol_position(self):
        with pytest.raises(ValidationError, match="position 3"):
            AminoAcidSequence("GGZ")


class TestParseFasta:
    def test_minimal_record(self):
        assert parse_fasta(">x\nGGA\n") == [("x", "GGA")]

    def test_multiline_join(self):
        records = parse_fasta(">x\nGG\nA\n>y\nAAA\n")
        assert records == [("x", "GGA"), ("y", "AAA")]

    def test_invalid_symbol(self):
        with pytest.raises(ValidationError, match="position 3"):
            parse_fasta(">x\nGGZ\n")

    def test_empty_record(self):
        with pytest.raises(FormatError):
            parse_fasta(">x\n>y\nAAA\n")

    def test_leading_garbage(self):
        with pytest.raises(FormatError):
            parse_fasta("GGA\n>x\nGGA\n")

    def test_bytes_input(self):
        assert parse_fasta(b">x\nGGA\n") == [("x", "GGA")]

    def test_roundtrip_modulo_wrapping(self):
        rng = random.Random(7)
        records = [(f"s{i}", AminoAcidSequence(random_seq(rng, 1, 200)))
                   for i in range(25)]
        again = parse_fasta(write_fasta(records))
        assert again == records

    def test_wrap_at_60(self):
        text = write_fasta([("x", AminoAcidSequence("G" * 150))])
        body = text.splitlines()[1:]
        assert [len(b) for b in body] == [60, 60, 30]


class TestExtractRepeatRegion:
    def test_length_300(self):
        seq = AminoAcidSequence("".join(SIGMA[i % 20] for i in range(300)))
        repeat = extract_repeat_region(seq)
        assert len(repeat) == 35
        assert str(repeat) == str(seq[150:185])

    def test_boundary(self):
        with pytest.raises(TooShortError):
            extract_repeat_region(AminoAcidSequence("G" * 265))

    def test_boundary_plus_one(self):
        seq = AminoAcidSequence("G" * 150 + "W" + "G" * 115)
        assert str(extract_repeat_region(seq)) == "W"

    def test_length_invariant(self):
        rng = random.Random(3)
        for _ in range(50):
            n = rng.randint(266, 900)
            seq = AminoAcidSequence(random_seq(rng, n, n))
            assert len(extract_repeat_region(seq)) == n - 265


def vec(*values, normalized=False):
    return PropertyVector.from_values(values, normalized=normalized)


class TestPropertyVector:
    def test_field_order(self):
        v = PropertyVector(1, 2, 3, 4, 5, 6, 7, 8)
        assert v.values() == (1, 2, 3, 4, 5, 6, 7, 8)

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            vec(-1, 0, 0, 0, 0, 0, 0, 0)

    def test_normalized_range(self):
        with pytest.raises(ValidationError):
            vec(1.5, 0, 0, 0, 0, 0, 0, 0, normalized=True)


class TestMinMaxScaler:
    def test_definition(self):
        vs = [vec(2, 1, 1, 1, 1, 1, 1, 1), vec(4, 1, 1, 1, 1, 1, 1, 1),
              vec(6, 1, 1, 1, 1, 1, 1, 1)]
        scaler = MinMaxScaler.fit(vs)
        outs = [scaler.transform(v).values()[0] for v in vs]
        assert outs == [0.0, 0.5, 1.0]

    def test_roundtrip(self):
        rng = random.Random(11)
        vs = [vec(*[rng.uniform(0, 50) for _ in range(8)]) for _ in range(20)]
        scaler = MinMaxScaler.fit(vs)
        for v in vs:
            back = scaler.inverse_transform(scaler.transform(v))
            for a, b in zip(back.values(), v.values()):
                assert abs(a - b) < 1e-12

    def test_constant_column_degenerate(self):
        vs = [vec(5, 1, 1, 1, 1, 1, 1, 1), vec(5, 2, 1, 1, 1, 1, 1, 1),
              vec(5, 3, 1, 1, 1, 1, 1, 1)]
        scaler = MinMaxScaler.fit(vs)
        assert scaler.degenerate[0] is True and scaler.degenerate[1] is False
        assert scaler.transform(vs[0]).values()[0] == 0.0
        # inverse of a degenerate component recovers the constant
        assert scaler.inverse_transform(scaler.transform(vs[0])).values()[0] == 5.0

    def test_invert_requires_normalized(self):
        scaler = MinMaxScaler.fit([vec(0, 0, 0, 0, 0, 0, 0, 0),
                                   vec(1, 1, 1, 1, 1, 1, 1, 1)])
        with pytest.raises(StateError):
            scaler.inverse_transform(vec(0.5, 0, 0, 0, 0, 0, 0, 0))

    def test_fit_needs_two(self):
        with pytest.raises(ConfigError):
            MinMaxScaler.fit([vec(1, 1, 1, 1, 1, 1, 1, 1)])

    def test_clip(self):
        scaler = MinMaxScaler.fit([vec(1, 0, 0, 0, 0, 0, 0, 0),
                                   vec(2, 0, 0, 0, 0, 0, 0, 0)])
        clipped = scaler.transform(vec(5, 0, 0, 0, 0, 0, 0, 0), clip=True)
        assert clipped.values()[0] == 1.0


class TestMakeFolds:
    def test_paper_configuration(self):
        plan = make_folds(592, 16, 5, rng_seed=0)
        assert len(plan.folds) == 16
        assert all(len(f) == 37 for f in plan.folds)
        assert len(plan.selected) == 5
        for fold in plan.selected:
            assert len(plan.train_indices(fold)) == 555

    def test_small(self):
        plan = make_folds(4, 2, 1, rng_seed=1)
        assert len(plan.folds) == 2 and all(len(f) == 2 for f in plan.folds)
        assert len(plan.selected) == 1

    def test_determinism(self):
        assert make_folds(60, 6, 3, 42) == make_folds(60, 6, 3, 42)
        assert make_folds(60, 6, 3, 42) != make_folds(60, 6, 3, 43)

    def test_unequal_rejected(self):
        with pytest.raises(ConfigError):
            make_folds(10, 3, 1, 0)

    def test_partition_property(self):
        rng = random.Random(5)
        for _ in range(25):
            k = rng.randint(1, 8)
            n = k * rng.randint(1, 9)
            plan = make_folds(n, k, rng.randint(0, k), rng.randint(0, 99))
            flat = sorted(i for fold in plan.folds for i in fold)
            assert flat == list(range(n))


class TestUniprot:
    def test_url_shape(self):
        url = build_uniprot_url(6893, [2, 3, 4, 5])
        assert "taxonomy_id:6893" in url
        assert url.count("annotation_score:") == 4
        assert url.startswith("https://rest.uniprot.org/uniprotkb/stream?")
        assert "compressed=true" in url and "format=fasta" in url

    def test_fixture_fetch(self, tmp_path):
        fixture = tmp_path / "records.fasta.gz"
        fixture.write_bytes(gzip.compress(b">a\nGGA\n>b\nAAA\n>c\nGYG\n"))
        dest = tmp_path / "out.fasta"
        count = fetch_uniprot(6893, [2, 3], dest, fixture_path=fixture)
        assert count == 3
        assert parse_fasta(dest.read_text()) == [
            ("a", "GGA"), ("b", "AAA"), ("c", "GYG")]

    def test_network_error_no_partial_file(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise urllib.error.URLError("unreachable")

        monkeypatch.setattr("urllib.request.urlopen", boom)
        dest = tmp_path / "out.fasta"
        with pytest.raises(NetworkError):
            fetch_uniprot(6893, [2], dest)
        assert not dest.exists()

    def test_bad_gzip(self, tmp_path):
        fixture = tmp_path / "bad.gz"
        fixture.write_bytes(b"not gzip at all")
        with pytest.raises(FormatError):
            fetch_uniprot(6893, [2], tmp_path / "out.fasta", fixture_path=fixture)

    def test_cache_env(self, tmp_path, monkeypatch):
        cache = tmp_path / "cache"
        monkeypatch.setenv("SILKFORGE_CACHE", str(cache))
        payload = gzip.compress(b">a\nGGA\n")
        calls = []

        class FakeResponse:
            def read(self):
                return payload

            def __enter__(self):
                return self

            def __exit__(self, *a):
                return False

        def fake_urlopen(url, timeout=None):
            calls.append(url)
            return FakeResponse()

        monkeypatch.setattr("urllib.request.urlopen", fake_urlopen)
        assert fetch_uniprot(6893, [2], tmp_path / "o1.fasta") == 1
        assert fetch_uniprot(6893, [2], tmp_path / "o2.fasta") == 1
        assert len(calls) == 1  # second call served from cache


class TestBackground:
    def test_builtin_values(self):
        assert MASP_BACKGROUND["G"] == 0.3766
        assert MASP_BACKGROUND["A"] == 0.2232

    def test_builtin_sum(self):
        total = sum(MASP_BACKGROUND.probs.values())
        assert abs(total - 0.9999) < 1e-12

    def test_pooled_counts(self):
        dist = background_frequencies(["AG", "GA"])
        assert dist["A"] == 0.5 and dist["G"] == 0.5

    def test_invalid_distribution(self):
        bad = dict(MASP_BACKGROUND.probs)
        bad["G"] += 0.5
        with pytest.raises(ValidationError):
            BackgroundDistribution(bad)


class TestPropertiesTsv:
    def test_roundtrip(self, tmp_path):
        rng = random.Random(2)
        rows = [(f"r{i}", vec(*[rng.uniform(0, 9) for _ in range(8)]))
                for i in range(6)]
        path = tmp_path / "props.tsv"
        write_properties_tsv(rows, path)
        assert read_properties_tsv(path) == rows

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("id\ttoughness\n1\t2\n")
        with pytest.raises(FormatError):
            read_properties_tsv(path)
