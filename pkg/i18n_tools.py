#!/usr/bin/env python3
"""
Message catalog maintenance

    python i18n_tools.py validate   # JSON syntax of every catalog
    python i18n_tools.py check      # same keys and placeholders in every language
    python i18n_tools.py extract    # keys used in the code are present in en.json
"""

import json
import re
import string
import sys
from pathlib import Path
from typing import Dict, List, Set

import click

ROOT = Path(__file__).resolve().parent
LOCALES_DIR = ROOT / "locales"
BASE_LANGUAGE = "en"

KEY_PATTERNS = [
    re.compile(r'(?:get_text|styled_text)\(\s*["\']([^"\']+)["\']'),
    re.compile(r'message_key\s*=\s*["\']([^"\']+)["\']'),
]


def load_catalogs(locales_dir: Path = LOCALES_DIR) -> Dict[str, dict]:
    """All catalogs by language code; raises ValueError naming a broken file"""
    catalogs = {}
    for path in sorted(Path(locales_dir).glob("*.json")):
        try:
            catalogs[path.stem] = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValueError(f"{path.name}: line {e.lineno}: {e.msg}")
    return catalogs


def placeholders(text: str) -> Set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(text) if name}


def consistency_problems(catalogs: Dict[str, dict], base: str = BASE_LANGUAGE) -> List[str]:
    """Missing or extra keys and mismatched placeholders relative to the base catalog"""
    if base not in catalogs:
        return [f"base catalog {base}.json not found"]
    reference = catalogs[base]
    problems = []
    for lang, catalog in sorted(catalogs.items()):
        if lang == base:
            continue
        missing = set(reference) - set(catalog)
        extra = set(catalog) - set(reference)
        if missing:
            problems.append(f"{lang}.json missing keys: {sorted(missing)}")
        if extra:
            problems.append(f"{lang}.json extra keys: {sorted(extra)}")
        for key in sorted(set(reference) & set(catalog)):
            if placeholders(reference[key]) != placeholders(catalog[key]):
                problems.append(f"{lang}.json placeholders differ for '{key}'")
    return problems


def extract_keys(root: Path = ROOT) -> Set[str]:
    """Message keys referenced by the code"""
    keys = set()
    for path in Path(root).glob("*.py"):
        content = path.read_text(encoding="utf-8")
        for pattern in KEY_PATTERNS:
            keys.update(pattern.findall(content))
    return keys


@click.group()
def main():
    """Message catalog tools"""


@main.command()
def validate():
    """Validate JSON syntax in all catalogs"""
    try:
        catalogs = load_catalogs()
    except ValueError as e:
        click.secho(f"invalid catalog: {e}", fg="red", err=True)
        sys.exit(1)
    click.secho(f"{len(catalogs)} catalogs are valid", fg="green")


@main.command()
def check():
    """Check key and placeholder consistency across languages"""
    problems = consistency_problems(load_catalogs())
    for problem in problems:
        click.secho(problem, fg="red", err=True)
    if problems:
        sys.exit(1)
    click.secho("all catalogs are consistent", fg="green")


@main.command()
def extract():
    """Check that every key used in the code has an English message"""
    used = extract_keys()
    missing = used - set(load_catalogs().get(BASE_LANGUAGE, {}))
    for key in sorted(missing):
        click.secho(f"missing: {key}", fg="red", err=True)
    if missing:
        sys.exit(1)
    click.secho(f"all {len(used)} keys are present", fg="green")


if __name__ == "__main__":
    main()
