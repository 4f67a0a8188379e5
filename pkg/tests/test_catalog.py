import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popbias.catalog import (
    CatalogEntry,
    Interaction,
    ParseError,
    TitleIndex,
    compute_popularity,
    levenshtein,
    normalize_title,
    parse_movies,
    parse_ratings,
    read_movies_file,
)


class TestParseMovies:
    def test_basic_line(self):
        entries, issues = parse_movies(["1::Toy Story (1995)::Animation|Children"])
        assert not issues
        assert entries == [
            CatalogEntry(item=1, title="Toy Story", year=1995, genres=("Animation", "Children"))
        ]

    def test_single_genre(self):
        entries, _ = parse_movies(["2::Heat (1995)::Action"])
        assert entries[0].title == "Heat"
        assert entries[0].year == 1995
        assert entries[0].genres == ("Action",)

    def test_malformed_line_recorded_with_number(self):
        entries, issues = parse_movies(["1::Heat (1995)::Action", "", "3::BadLine"])
        assert len(entries) == 1
        assert len(issues) == 1
        assert issues[0].line_no == 3
        assert "::" in issues[0].reason

    def test_strict_mode_raises(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_movies(["3::BadLine"], strict=True)

    def test_yearless_title_kept_with_year_zero(self):
        entries, issues = parse_movies(["9::Mystery Short::Drama"])
        assert not issues
        assert entries[0].year == 0
        assert entries[0].title == "Mystery Short"

    def test_non_integer_id(self):
        _, issues = parse_movies(["x::Heat (1995)::Action"])
        assert issues and "integer" in issues[0].reason


class TestParseRatings:
    def test_integer_rating(self):
        interactions, issues = parse_ratings(["1::122::5::838985046"])
        assert not issues
        assert interactions == [Interaction(user=1, item=122, rating=5.0, timestamp=838985046)]

    def test_half_star_rating(self):
        interactions, _ = parse_ratings(["1::185::3.5::838983525"])
        assert interactions[0].rating == 3.5

    def test_malformed(self):
        _, issues = parse_ratings(["x::y::z"])
        assert len(issues) == 1

    def test_rating_out_of_range(self):
        _, issues = parse_ratings(["1::2::5.5::100", "1::3::0::100"])
        assert len(issues) == 2

    def test_strict_mode(self):
        with pytest.raises(ParseError):
            parse_ratings(["x::y::z"], strict=True)


def test_latin1_fallback(tmp_path):
    path = tmp_path / "movies.dat"
    path.write_bytes("7::Am\xe9lie (2001)::Romance".encode("latin-1"))
    entries, issues = read_movies_file(path)
    assert not issues
    assert entries[0].title == "Amélie"


class TestComputePopularity:
    def test_counts(self):
        interactions, _ = parse_ratings(
            [f"{u}::7::4::1" for u in range(3)] + ["9::9::3::1"]
        )
        phi = compute_popularity(interactions)
        assert dict(phi) == {7: 3, 9: 1}

    def test_single_interaction(self):
        phi = compute_popularity([Interaction(1, 5, 4.0, 0)])
        assert dict(phi) == {5: 1}

    def test_duplicate_user_item_pairs_both_counted(self):
        # Oracle: brute-force group-by over the raw lines.
        lines = ["1::5::4::10", "1::5::3::20", "2::5::5::30", "2::6::1::40"]
        interactions, _ = parse_ratings(lines)
        expected: dict[int, int] = {}
        for line in lines:
            item = int(line.split("::")[1])
            expected[item] = expected.get(item, 0) + 1
        assert dict(compute_popularity(interactions)) == expected

    def test_empty_errors(self):
        with pytest.raises(ValueError, match="no interactions"):
            compute_popularity([])

    @given(
        st.lists(
            st.tuples(st.integers(1, 20), st.integers(1, 50)), min_size=1, max_size=200
        )
    )
    def test_total_equals_interaction_count(self, pairs):
        interactions = [Interaction(u, i, 3.0, 0) for u, i in pairs]
        assert compute_popularity(interactions).total == len(interactions)


class TestNormalizeTitle:
    def test_article_rotation(self):
        assert normalize_title("Matrix, The", 1999).normalized_title == "matrix"

    def test_leading_article(self):
        assert normalize_title("The Matrix", 1999).normalized_title == "matrix"

    def test_diacritics(self):
        assert normalize_title("Amélie", 2001).normalized_title == "amelie"

    def test_whitespace_and_digits(self):
        assert normalize_title("Se7en ", 1995).normalized_title == "se7en"

    def test_punctuation(self):
        assert normalize_title("Ocean's 11!", 2001).normalized_title == "oceans 11"

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize_title("   ", 1999)

    @given(st.text(alphabet=st.characters(codec="latin-1"), min_size=1))
    @settings(max_examples=200)
    def test_idempotent(self, title):
        try:
            key = normalize_title(title, 2000)
        except ValueError:
            return
        if not key.normalized_title:
            return
        again = normalize_title(key.normalized_title, 2000)
        assert again.normalized_title == key.normalized_title


def _reference_levenshtein(a: str, b: str) -> int:
    rows = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        new = [i]
        for j, cb in enumerate(b, 1):
            new.append(min(rows[j] + 1, new[j - 1] + 1, rows[j - 1] + (ca != cb)))
        rows = new
    return rows[-1]


@given(st.text(max_size=8), st.text(max_size=8))
def test_levenshtein_matches_reference(a, b):
    exact = _reference_levenshtein(a, b)
    assert levenshtein(a, b) == exact
    capped = levenshtein(a, b, cap=2)
    assert capped == exact if exact <= 2 else capped == 3


class TestResolveTitle:
    @pytest.fixture()
    def index(self):
        entries = [
            CatalogEntry(1, "Matrix, The", 1999),
            CatalogEntry(2, "Heat", 1995),
            CatalogEntry(3, "Heat", 1972),
            CatalogEntry(4, "Amélie", 2001),
            CatalogEntry(5, "Untitled Short", 0),
        ]
        return TitleIndex.build(entries)

    def test_normalization_round_trip(self, index):
        assert index.resolve("The Matrix", 1999) == 1

    def test_year_tolerance(self, index):
        assert index.resolve("Matrix", 2000) == 1

    def test_unmatched(self, index):
        assert index.resolve("Completely Invented Film", 1990) is None

    def test_fuzzy_within_two_edits(self, index):
        assert index.resolve("Amelei", 2001) == 4

    def test_fuzzy_ambiguity_unmatched(self):
        entries = [CatalogEntry(1, "Abcde", 1990), CatalogEntry(2, "Abcdf", 1990)]
        index = TitleIndex.build(entries)
        assert index.resolve("Abcdx", 1990) is None

    def test_exact_year_beats_fuzzy(self, index):
        assert index.resolve("Heat", 1972) == 3
        assert index.resolve("Heat", 1995) == 2

    def test_yearless_entries_not_fuzzily_matched(self, index):
        assert index.resolve("Untitled Short", 0) == 5
        assert index.resolve("Untitled Shorx", 1) is None

    @given(st.data())
    @settings(max_examples=50)
    def test_round_trip_identity(self, data):
        words = st.sampled_from(
            ["red", "blue", "stone", "river", "night", "garden", "seven", "last"]
        )
        n = data.draw(st.integers(2, 8))
        entries = []
        seen = set()
        for i in range(n):
            title = " ".join(data.draw(words) for _ in range(3))
            year = data.draw(st.integers(1950, 2008))
            key = (normalize_title(title, year).normalized_title, year)
            if key in seen:
                continue
            seen.add(key)
            entries.append(CatalogEntry(i + 1, title, year))
        # Same title in adjacent years is ambiguous by design; drop those.
        by_title = {}
        for e in entries:
            by_title.setdefault(normalize_title(e.title, e.year).normalized_title, []).append(e)
        entries = [
            e
            for e in entries
            if all(
                abs(other.year - e.year) > 1 or other is e
                for other in by_title[normalize_title(e.title, e.year).normalized_title]
            )
        ]
        index = TitleIndex.build(entries)
        for e in entries:
            assert index.resolve(e.title, e.year) == e.item


def test_popularity_scores_at_least_one(toy_files):
    _, ratings_path = toy_files
    from popbias.catalog import read_ratings_file

    interactions, _ = read_ratings_file(ratings_path)
    phi = compute_popularity(interactions)
    assert all(v >= 1 for v in phi.values())
    assert math.isclose(phi.total, len(interactions))
