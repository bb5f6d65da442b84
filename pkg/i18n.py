"""
Internationalization (i18n) of command-line messages
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from click import style

logger = logging.getLogger(__name__)

LOCALES_DIR = Path(__file__).resolve().parent / "locales"
DEFAULT_LANGUAGE = "en"


class I18n:
    """Internationalization handler"""

    def __init__(self, locales_dir=LOCALES_DIR):
        self.locales_dir = Path(locales_dir)
        self._translations: Dict[str, Dict[str, Any]] = {}
        self._supported_languages = []
        self._load_translations()

    def _load_translations(self):
        """Load all translation files from the locales directory"""
        if not self.locales_dir.is_dir():
            logger.warning("locales directory '%s' not found", self.locales_dir)
            return

        for filepath in sorted(self.locales_dir.glob("*.json")):
            lang_code = filepath.stem
            try:
                with open(filepath, "r", encoding="utf-8") as f:
                    self._translations[lang_code] = json.load(f)
                self._supported_languages.append(lang_code)
                logger.debug("loaded translations for '%s' from %s", lang_code, filepath.name)
            except (OSError, json.JSONDecodeError) as e:
                logger.warning("cannot load translations from %s: %s", filepath.name, e)

    def get_supported_languages(self) -> list:
        """Get list of supported language codes"""
        return self._supported_languages.copy()

    def get_language_display_name(self, lang_code: str) -> str:
        """Get display name for language code"""
        display_names = {
            "en": "English",
            "fr": "Français",
            "de": "Deutsch",
            "es": "Español",
            "nl": "Nederlands",
        }
        return display_names.get(lang_code, f"{lang_code.upper()}")

    def _lookup(self, lang: str, key: str) -> Optional[Any]:
        value = self._translations.get(lang)
        for part in key.split("."):
            if isinstance(value, dict) and part in value:
                value = value[part]
            else:
                return None
        return value

    def get(self, key: str, lang: str = DEFAULT_LANGUAGE, **kwargs) -> str:
        """
        Get translated text for a given key and language

        Args:
            key: Translation key (nested keys with dots, e.g. 'errors.input')
            lang: Language code
            **kwargs: Variables to format into the translation string

        Returns:
            Translated text or the key if translation not found
        """
        # Fallback chain: requested -> English -> key
        for candidate in dict.fromkeys([lang, DEFAULT_LANGUAGE]):
            value = self._lookup(candidate, key)
            if value is None:
                continue
            if kwargs and isinstance(value, str):
                try:
                    return value.format(**kwargs)
                except (KeyError, ValueError):
                    return value
            return value
        return key


# Global i18n instance
_i18n = I18n()


def get_text(key: str, lang: str = DEFAULT_LANGUAGE, **kwargs) -> str:
    """Convenience function to get translated text"""
    return _i18n.get(key, lang, **kwargs)


def styled_text(key: str, lang: str = DEFAULT_LANGUAGE, fg: str = None, bold: bool = False, **kwargs) -> str:
    """Translated text with terminal colors"""
    return style(get_text(key, lang, **kwargs), fg=fg, bold=bold)


def get_supported_languages() -> list:
    """Get list of supported language codes"""
    return _i18n.get_supported_languages()


def get_language_display_name(lang_code: str) -> str:
    """Get display name for language code"""
    return _i18n.get_language_display_name(lang_code)


def _map_language_code_to_supported(detected_lang: str, supported_languages: list) -> Optional[str]:
    """Map a locale code like 'de_AT.UTF-8' or 'pt' to a supported language"""
    code = detected_lang.split(".")[0].split("@")[0].replace("-", "_").lower()
    base = code.split("_")[0]
    if base in supported_languages:
        return base

    # Language family mappings
    language_mappings = {
        "lb": "de",  # Luxembourgish
        "gsw": "de",  # Swiss German
        "fy": "nl",  # Frisian
        "af": "nl",  # Afrikaans
        "ca": "es",  # Catalan
        "gl": "es",  # Galician
        "pt": "es",
        "it": "fr",
        "wa": "fr",  # Walloon
        "c": "en",
        "posix": "en",
    }
    mapped = language_mappings.get(base)
    return mapped if mapped in supported_languages else None


def detect_language(explicit: Optional[str] = None, environ: Mapping[str, str] = None) -> str:
    """
    Pick the message language.

    Order: explicit choice (--lang), TSSP_LANG, the LANGUAGE priority list
    ('fr:de:en'), LC_ALL, LC_MESSAGES, LANG. Falls back to English.
    """
    environ = os.environ if environ is None else environ
    languages = get_supported_languages()
    if not languages:
        return DEFAULT_LANGUAGE

    candidates = [explicit, environ.get("TSSP_LANG")]
    candidates += (environ.get("LANGUAGE") or "").split(":")
    candidates += [environ.get("LC_ALL"), environ.get("LC_MESSAGES"), environ.get("LANG")]
    for candidate in candidates:
        if not candidate:
            continue
        mapped = _map_language_code_to_supported(candidate, languages)
        if mapped:
            return mapped
    return DEFAULT_LANGUAGE
