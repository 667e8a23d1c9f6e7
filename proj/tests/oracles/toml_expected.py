"""Freezes the tomli reading of the TOML fixture as JSON."""
import json
import pathlib

import tomli

fixtures = pathlib.Path(__file__).resolve().parents[1] / "fixtures"
data = tomli.loads((fixtures / "run_config.toml").read_text(encoding="utf-8"))
(fixtures / "run_config.expected.json").write_text(json.dumps(data, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
