from __future__ import annotations

import os
import re
import warnings

from copy import deepcopy
from pathlib import Path
from typing import Any, Dict

import yaml

from dotenv import load_dotenv
from pydantic import ValidationError

from app.config.config_models import Settings
from app.utils.file_utils import read_key_value_file


KEY_VALUE_SUFFIXES = ('.txt', '.cfg', '.conf', '.kv')


class ConfigLoader:
    """
    Loads, merges, expands, and validates configuration files.

    - Loads a base configuration from `default.yaml`
    - Merges an override file: YAML, or plain `key=value` text where dotted keys
      address nested sections (`synth.frames=8`) and bare keys address `run`
    - Merges explicit overrides (CLI flags) last
    - Expands environment variable placeholders (${VAR_NAME}, ${VAR_NAME:default})
    - Validates the final configuration against the pydantic models

    Precedence for the override path: explicit `config_path` argument > MMHCO_CONFIG env var >
    `<APP_ENV>.yaml` next to the base file.

    Attributes:
        project_root (Path): Root directory of the project
        config_dir (Path): Directory containing configuration files
        base_config_path (Path): Path to the default configuration file
        override_path (Path | None): Path to the override configuration file
        settings (Settings | None): Validated configuration settings
    """

    def __init__(
        self,
        project_root: str,
        config_path: str | None = None,
        overrides: Dict[str, Any] | None = None,
    ):
        """
        Args:
            project_root: Path to project root.
            config_path: Override configuration file (YAML or key=value).
            overrides: Dotted-key overrides applied after every file, e.g. {'run.seed': 3}.

        Raises:
            FileNotFoundError: If the base or an explicitly named override file is missing.
            ValueError: If a file is malformed or the merged configuration is invalid.
        """
        self.project_root = Path(project_root)
        if not self.project_root.exists():
            raise FileNotFoundError(f'Project root not found: {self.project_root}')
        self.config_dir = self.project_root / 'app' / 'config'
        self.base_config_path = self.config_dir / 'default.yaml'
        load_dotenv(self.project_root / '.env', override=False)

        env_override = os.getenv('MMHCO_CONFIG')
        self.override_path = Path(config_path) if config_path else (Path(env_override) if env_override else None)
        self.overrides = dict(overrides or {})

        self._raw_config: Dict[str, Any] = {}
        self.settings: Settings | None = None

        self._load_config()
        self._expand_env_vars()
        self._validate_and_expose()

    def _load_yaml_file(self, path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise FileNotFoundError(f'Config file not found: {path}')
        with path.open('r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
            if not isinstance(data, dict):
                raise ValueError(f'Config file must contain a mapping at top-level: {path}')
            return data

    @staticmethod
    def _nest(flat: Dict[str, Any]) -> Dict[str, Any]:
        """{'synth.frames': 8, 'seed': 1} -> {'synth': {'frames': 8}, 'run': {'seed': 1}}."""
        nested: Dict[str, Any] = {}
        for key, value in flat.items():
            parts = key.split('.') if '.' in key else ['run', key]
            node = nested
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value
        return nested

    def _load_key_value_file(self, path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise FileNotFoundError(f'Config file not found: {path}')
        # each value is read as a YAML scalar/flow sequence: 8 -> int, true -> bool, [1, 2] -> list
        flat = {key: yaml.safe_load(value) if value else None for key, value in read_key_value_file(path).items()}
        return self._nest(flat)

    def _load_override_file(self, path: Path) -> Dict[str, Any]:
        if path.suffix.lower() in KEY_VALUE_SUFFIXES:
            return self._load_key_value_file(path)
        return self._load_yaml_file(path)

    def _load_config(self) -> None:
        base = self._load_yaml_file(self.base_config_path)
        merged = deepcopy(base)

        if self.override_path is None:
            app_env_from_os = os.getenv('APP_ENV')
            app_env_from_base_raw = base.get('app', {}).get('env')
            app_env_from_base_expanded = (
                self._expand_string(app_env_from_base_raw)
                if isinstance(app_env_from_base_raw, str)
                else app_env_from_base_raw
            )
            app_env = app_env_from_os or app_env_from_base_expanded
            if app_env:
                candidate = self.config_dir / f'{app_env}.yaml'
                if candidate.exists():
                    self.override_path = candidate
                else:
                    warnings.warn(f'Config file not found: {candidate}')

        if self.override_path:
            merged = self._recursive_merge(merged, self._load_override_file(self.override_path))
        if self.overrides:
            merged = self._recursive_merge(merged, self._nest(self.overrides))

        self._raw_config = merged

    def _recursive_merge(self, base_dict: Dict[str, Any], override_dict: Dict[str, Any]) -> Dict[str, Any]:
        """
        Recursively merge two dictionaries, with override values taking precedence.

        Example:
            base = {"a": 1, "b": {"c": 2, "d": 3}}
            override = {"b": {"c": 4}, "e": 5}
            result = {"a": 1, "b": {"c": 4, "d": 3}, "e": 5}
        """
        result = deepcopy(base_dict)
        for key, override_value in (override_dict or {}).items():
            if key in result and isinstance(result[key], dict) and isinstance(override_value, dict):
                result[key] = self._recursive_merge(result[key], override_value)
            else:
                result[key] = deepcopy(override_value)
        return result

    def _expand_env_vars(self) -> None:
        def expand(value: Any) -> Any:
            if isinstance(value, str):
                return self._expand_string(value)
            if isinstance(value, dict):
                return {k: expand(v) for k, v in value.items()}
            if isinstance(value, list):
                return [expand(v) for v in value]
            return value

        self._raw_config = expand(self._raw_config)

    def _expand_string(self, s: str) -> str:
        """
        Replace ${VAR_NAME} and ${VAR_NAME:default} placeholders with environment values.

        Raises:
            ValueError: If a placeholder references an undefined variable without a default.
        """
        pattern = re.compile(r'\$\{([^}:]+)(?::([^\}]+))?\}')

        def replace_match(match: re.Match) -> str:
            var_name = match.group(1).strip()
            default_val = match.group(2)
            env_val = os.getenv(var_name)
            if env_val is None:
                if default_val is not None:
                    return default_val
                raise ValueError(f"Environment variable '{var_name}' is not defined for placeholder {match.group(0)}")
            return env_val

        return pattern.sub(replace_match, s)

    def _validate_and_expose(self) -> None:
        try:
            self.settings = Settings(**self._raw_config)
        except ValidationError as e:
            error_message = ''
            for error in e.errors():
                error_message += (
                    f"error_type:{error['type']} error_location:{error['loc']} error_message:{error['msg']}\n"
                )
            raise ValueError(f'An error occurred while validating the configuration: {error_message}')

    def get_settings(self) -> Settings:
        """
        Get the validated configuration settings.

        Raises:
            RuntimeError: If the settings have not been initialized.

        Example:
            >>> settings = ConfigLoader('.').get_settings()
            >>> settings.run.frames
            4
        """
        if self.settings is None:
            raise RuntimeError('Settings not initialized')
        return self.settings


__all__ = ['ConfigLoader']
