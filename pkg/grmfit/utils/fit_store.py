import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from pydantic import ValidationError

from grmfit.core.errors import ParseError
from grmfit.models.schemas import FitConfig, FitResult, ItemParameters, Manifest, Method
from grmfit.services.types import ResponseMatrix

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def fit_filename(method: Method) -> str:
    return f"fit_{method.slug}.json"


def fit_key(
    data: ResponseMatrix, init: Sequence[ItemParameters], method: Method, config: FitConfig
) -> str:
    """Content address of one fit task: same inputs, same key."""
    digest = hashlib.sha256()
    digest.update(str(data.responses.shape).encode())
    digest.update(data.responses.astype("<i8").tobytes())
    digest.update(data.item_ids.astype("<i8").tobytes())
    digest.update(json.dumps([item.to_row() for item in init], sort_keys=True).encode())
    digest.update(method.value.encode())
    digest.update(config.model_dump_json().encode())
    return digest.hexdigest()


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=str(path), line=exc.lineno) from exc


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def read_fit_json(path: Path) -> FitResult:
    payload = read_json(path)
    try:
        return FitResult.from_payload(payload)
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        field = exc.args[0] if isinstance(exc, KeyError) else None
        raise ParseError(f"not a fit result: {exc}", path=str(path), field=field) from exc


class FitStore:
    """File-backed store of fit results under a study directory.

    Each fit lives at `<root>/<replicate dir>/fit_<method>.json` together with the
    content key of its inputs, so a rerun can tell finished work from stale files.
    """

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, replicate_dir: str, method: Method) -> Path:
        return self.root / replicate_dir / fit_filename(method)

    def get(self, replicate_dir: str, method: Method, key: str) -> Optional[FitResult]:
        """The stored result when its key matches, else None."""
        path = self.path(replicate_dir, method)
        if not path.exists():
            return None
        try:
            payload = read_json(path)
            if payload.get("key") != key:
                return None
            return FitResult.from_payload(payload)
        except Exception:
            logger.warning("ignoring unreadable fit file %s", path)
            return None

    def put(self, replicate_dir: str, key: str, result: FitResult) -> Path:
        payload: Dict[str, Any] = {"key": key, **result.to_payload()}
        return write_json(self.path(replicate_dir, result.method), payload)

    def write_manifest(self, manifest: Manifest) -> Path:
        return write_json(self.root / MANIFEST_NAME, manifest.model_dump(mode="json"))

    def read_manifest(self) -> Manifest:
        path = self.root / MANIFEST_NAME
        try:
            return Manifest.model_validate(read_json(path))
        except ValidationError as exc:
            error = exc.errors()[0]
            field = ".".join(str(p) for p in error["loc"]) or None
            raise ParseError(error["msg"], path=str(path), field=field) from exc
