#!/usr/bin/env python3
"""
Language detection test suite

Tests choosing the message language from --lang and the locale environment
"""

import pytest
import os
import sys

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from i18n import _map_language_code_to_supported, detect_language, get_supported_languages


class TestLanguageMapping:
    """Test language code mapping functionality"""

    def setup_method(self):
        """Set up test data"""
        self.supported = get_supported_languages()

    @pytest.mark.parametrize(
        "input_lang,expected",
        [
            # Direct matches
            ("en", "en"),
            ("fr_BE.UTF-8", "fr"),
            ("de-AT", "de"),
            ("nl_NL@euro", "nl"),
            # Language family mappings
            ("it_IT", "fr"),
            ("pt_BR.UTF-8", "es"),
            ("lb_LU", "de"),
            ("af", "nl"),
            # POSIX locales
            ("C", "en"),
            ("POSIX", "en"),
            # No match
            ("ja_JP", None),
        ],
    )
    def test_language_mapping(self, input_lang, expected):
        """Locale codes map to a supported language or nothing"""
        result = _map_language_code_to_supported(input_lang, self.supported)
        assert result == expected, f"{input_lang} should map to {expected}, got {result}"


class TestDetection:
    """Test the detection order"""

    def test_explicit_choice_wins(self):
        """--lang beats the environment"""
        assert detect_language("de", {"TSSP_LANG": "fr", "LANG": "es_ES.UTF-8"}) == "de"

    def test_tool_variable(self):
        """TSSP_LANG beats the locale variables"""
        assert detect_language(None, {"TSSP_LANG": "nl", "LANG": "fr_FR.UTF-8"}) == "nl"

    def test_language_priority_list(self):
        """First usable entry of LANGUAGE is taken"""
        environ = {"LANGUAGE": "ja:fr:de", "LANG": "es_ES.UTF-8"}
        assert detect_language(None, environ) == "fr"

    def test_lc_all_before_lang(self):
        """LC_ALL beats LANG"""
        assert detect_language(None, {"LC_ALL": "de_DE.UTF-8", "LANG": "fr_FR.UTF-8"}) == "de"

    def test_lc_messages_between_lc_all_and_lang(self):
        """LC_MESSAGES beats LANG and loses to LC_ALL"""
        environ = {"LC_MESSAGES": "nl_NL.UTF-8", "LANG": "fr_FR.UTF-8"}
        assert detect_language(None, environ) == "nl"
        assert detect_language(None, {**environ, "LC_ALL": "es_ES.UTF-8"}) == "es"

    def test_default_english(self):
        """Nothing usable gives English"""
        assert detect_language(None, {}) == "en"
        assert detect_language("ja", {"LANG": "zh_CN.UTF-8"}) == "en"
