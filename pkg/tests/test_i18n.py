"""
Tests for the i18n (internationalization) system

Tests translation loading, key lookups, catalog consistency and the catalog tools
"""

import json
import pytest
import sys
import os

# Add parent directory to path to import modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from click.testing import CliRunner

from i18n import I18n, get_language_display_name, get_supported_languages, get_text, styled_text
from i18n_tools import consistency_problems, extract_keys, load_catalogs, main, placeholders


class TestI18nSystem:
    """Test suite for the internationalization system"""

    def test_supported_languages(self):
        """All shipped catalogs are loaded"""
        languages = get_supported_languages()
        expected_languages = {"en", "fr", "de", "es", "nl"}
        assert expected_languages.issubset(set(languages)), f"Missing expected languages. Got: {languages}"

    def test_language_display_names(self):
        """All supported languages have display names"""
        for lang in get_supported_languages():
            display_name = get_language_display_name(lang)
            assert display_name != lang, f"Display name for {lang} should be different from code"

    def test_formatting(self):
        """Placeholders are filled from keyword arguments"""
        text = get_text("plan_stage_row", "en", stage=1, n=85, c="17.0497")
        assert text == "  stage 1: n = 85, c = 17.0497"

    @pytest.mark.parametrize(
        "lang,expected",
        [("en", "Invalid input:"), ("fr", "Entrée invalide :"), ("nl", "Ongeldige invoer:")],
    )
    def test_error_prefixes(self, lang, expected):
        """Error prefixes are translated"""
        assert get_text("error_input", lang) == expected

    def test_fallback_to_english(self):
        """Unsupported language falls back to English"""
        assert get_text("plan_valid", "xx") == get_text("plan_valid", "en")

    def test_missing_key_fallback(self):
        """Missing keys come back unchanged"""
        assert get_text("no_such_key", "en") == "no_such_key"

    def test_nested_keys(self, tmp_path):
        """Dotted keys walk nested objects"""
        (tmp_path / "en.json").write_text(json.dumps({"errors": {"input": "bad {what}"}}))
        i18n = I18n(tmp_path)
        assert i18n.get("errors.input", "en", what="aql") == "bad aql"
        assert i18n.get("errors.missing", "en") == "errors.missing"

    def test_broken_catalog_is_skipped(self, tmp_path):
        """A malformed catalog is logged and left out"""
        (tmp_path / "en.json").write_text(json.dumps({"a": "b"}))
        (tmp_path / "fr.json").write_text("{not json")
        i18n = I18n(tmp_path)
        assert i18n.get_supported_languages() == ["en"]

    def test_styled_text_keeps_message(self):
        """Styling wraps the translated text"""
        assert "Risk allocation" in styled_text("plan_risks", "en", bold=True)


class TestCatalogs:
    """Test suite for catalog consistency"""

    def test_catalogs_are_consistent(self):
        """Every language has the English keys and placeholders"""
        assert consistency_problems(load_catalogs()) == []

    def test_code_keys_are_translated(self):
        """Every key used in the code exists in English"""
        english = load_catalogs()["en"]
        missing = extract_keys() - set(english)
        assert not missing, f"Keys without an English message: {sorted(missing)}"

    def test_error_keys_extracted(self):
        """message_key attributes of the error classes are found"""
        assert {"error_input", "error_numerical", "error_data_file"} <= extract_keys()

    def test_placeholder_mismatch_reported(self):
        """A translation dropping a placeholder is a problem"""
        catalogs = {"en": {"k": "{n} items"}, "fr": {"k": "articles"}}
        problems = consistency_problems(catalogs)
        assert len(problems) == 1 and "'k'" in problems[0]

    def test_placeholders(self):
        assert placeholders("stage {stage}: n = {n}") == {"stage", "n"}

    @pytest.mark.parametrize("command", ["validate", "check", "extract"])
    def test_tool_commands(self, command):
        """Catalog tools succeed on the shipped catalogs"""
        result = CliRunner().invoke(main, [command])
        assert result.exit_code == 0, result.output
