import os
from pathlib import Path


class EnvValue:
    def _raw(self, var: str) -> str | None:
        for try_file in [os.environ.get(f"{var}_FILE")]:
            if try_file and (p := Path(try_file)).is_file():
                return p.read_text().strip()
        return os.environ.get(var)

    def bool(self, var: str, default: bool = False) -> bool:
        value = self._raw(var)
        if value is None:
            return default
        return value.lower() in {"true", "yes", "on", "1"}

    def string(self, var: str, default: str = "") -> str:
        return self._raw(var) or default

    def path(self, var: str, default: Path) -> Path:
        value = self._raw(var)
        return default if not value else Path(value).expanduser()
