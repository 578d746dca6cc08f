import re
import string

import pytest
from hypothesis import given, strategies as st

from newsnudge.lexicon import (
    TOPICS,
    UNCLASSIFIED,
    KeywordEntry,
    Lexicon,
    LexiconError,
    classify_user_topic,
    default_lexicon_path,
    load_lexicon,
    match_keywords,
    save_lexicon,
    tokenize,
)


def brute_force_tokenize(text: str) -> list[str]:
    """Independent oracle for printable-ASCII input: character walk that
    accumulates [a-z0-9] runs and splits on everything else."""
    tokens, current = [], []
    for ch in text.lower():
        if ch in string.ascii_lowercase or ch in string.digits:
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


class TestTokenize:
    def test_basic(self):
        assert tokenize("Hello, World!") == ["hello", "world"]

    def test_underscore_splits(self):
        assert tokenize("a_b") == ["a", "b"]

    def test_empty(self):
        assert tokenize("") == []

    @given(st.text(alphabet=string.printable, max_size=200))
    def test_matches_oracle(self, text):
        assert tokenize(text) == brute_force_tokenize(text)

    @given(st.text(max_size=100))
    def test_tokens_are_lowercase_alnum(self, text):
        for token in tokenize(text):
            assert token == token.lower()
            assert re.fullmatch(r"[^\W_]+", token)


class TestLexicon:
    def test_default_lexicon_shape(self):
        lex = load_lexicon(default_lexicon_path())
        assert len(lex) == 60
        assert lex.counts_by_topic == {t: 20 for t in TOPICS}

    def test_duplicate_keyword_rejected(self):
        with pytest.raises(LexiconError, match="duplicate"):
            Lexicon([KeywordEntry("nba", "sports"), KeywordEntry("nba", "sports")])

    def test_unknown_topic_rejected(self):
        with pytest.raises(LexiconError, match="unknown topic"):
            Lexicon([KeywordEntry("nba", "weather")])

    def test_load_errors_name_rows(self, tmp_path):
        p = tmp_path / "kw.csv"
        p.write_text("keyword,topic\nnba,sports\nnba,sports\n")
        with pytest.raises(LexiconError, match="rows 2 and 3"):
            load_lexicon(p)
        p.write_text("keyword,topic\nnba,weather\n")
        with pytest.raises(LexiconError, match="row 2"):
            load_lexicon(p)
        p.write_text("word,topic\nnba,sports\n")
        with pytest.raises(LexiconError, match="header"):
            load_lexicon(p)

    def test_round_trip(self, tmp_path):
        lex = load_lexicon(default_lexicon_path())
        out = tmp_path / "out.csv"
        save_lexicon(lex, out)
        again = load_lexicon(out)
        assert again.entries == lex.entries
        assert "\r" not in out.read_text()


class TestMatchKeywords:
    @pytest.fixture
    def lex(self):
        return load_lexicon(default_lexicon_path())

    def test_whole_token_only(self, lex):
        assert match_keywords("NBAish fans", lex) == []
        assert match_keywords("the NBA! tonight", lex) == [("nba", "sports")]

    def test_order_and_dedup(self, lex):
        matches = match_keywords("yoga before the nba game, more yoga after", lex)
        assert matches == [("yoga", "lifestyle"), ("nba", "sports")]

    def test_case_insensitive(self, lex):
        assert match_keywords("PITCHER duel", lex) == [("pitcher", "sports")]

    @given(st.text(max_size=120))
    def test_matches_are_token_subset(self, text):
        lex = load_lexicon(default_lexicon_path())
        tokens = set(tokenize(text))
        for kw, topic in match_keywords(text, lex):
            assert kw in tokens
            assert lex.topic_of(kw) == topic


class TestClassifyUserTopic:
    @pytest.fixture
    def lex(self):
        return Lexicon(
            [
                KeywordEntry("nba", "sports"),
                KeywordEntry("pitcher", "sports"),
                KeywordEntry("oscars", "entertainment"),
                KeywordEntry("yoga", "lifestyle"),
            ]
        )

    def test_majority_of_posts_wins(self, lex):
        posts = ["nba tonight", "pitcher throws", "oscars red carpet"]
        assert classify_user_topic(posts, lex) == "sports"

    def test_tie_broken_by_total_hits(self, lex):
        posts = ["nba and pitcher duel", "oscars night"]
        assert classify_user_topic(posts, lex) == "sports"

    def test_tie_broken_by_topic_priority(self, lex):
        posts = ["nba game", "oscars show"]
        assert classify_user_topic(posts, lex) == "sports"
        posts = ["yoga class", "oscars show"]
        assert classify_user_topic(posts, lex) == "entertainment"

    def test_unclassified(self, lex):
        assert classify_user_topic(["just coffee"], lex) == UNCLASSIFIED

    def test_empty_posts_raises(self, lex):
        with pytest.raises(ValueError):
            classify_user_topic([], lex)
