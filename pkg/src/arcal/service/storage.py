"""On-disk persistence for clouds and labels.

Layout under the data directory:
    clouds/<cloud_id>.ply        uploaded point clouds
    clouds/<cloud_id>.meta.json  upload metadata
    labels/<cloud_id>.json       confirmed labels (raw bytes as uploaded)

All writes go through a temp-file + atomic rename, so readers never observe
a partially written file and a crash mid-write leaves the old state intact.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

from ..clouds import load_ply, loads_ply


@dataclass
class CloudRecord:
    cloud_id: str
    ply_path: Path
    point_count: int
    uploaded_at: float
    label_path: Path | None


def atomic_write(path, data):
    """Write bytes to `path` so that readers see either old or new content."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{uuid.uuid4().hex}.tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


class CloudStore:
    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.clouds_dir = self.data_dir / "clouds"
        self.labels_dir = self.data_dir / "labels"
        self.clouds_dir.mkdir(parents=True, exist_ok=True)
        self.labels_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    # -- clouds ------------------------------------------------------------

    def add_cloud(self, ply_bytes):
        """Parse and persist an uploaded PLY; returns its fresh record."""
        cloud = loads_ply(ply_bytes)  # raises PlyParseError with a byte offset
        cloud_id = uuid.uuid4().hex[:12]
        ply_path = self.clouds_dir / f"{cloud_id}.ply"
        meta = {"cloud_id": cloud_id, "point_count": len(cloud),
                "uploaded_at": time.time()}
        with self._lock:
            atomic_write(ply_path, ply_bytes if isinstance(ply_bytes, bytes)
                         else ply_bytes.encode("ascii"))
            atomic_write(self._meta_path(cloud_id),
                         json.dumps(meta).encode("ascii"))
        return self.get_record(cloud_id)

    def _meta_path(self, cloud_id):
        return self.clouds_dir / f"{cloud_id}.meta.json"

    def _label_path(self, cloud_id):
        return self.labels_dir / f"{cloud_id}.json"

    def has_cloud(self, cloud_id):
        return self._meta_path(cloud_id).exists()

    def get_record(self, cloud_id):
        meta_path = self._meta_path(cloud_id)
        if not meta_path.exists():
            raise KeyError(cloud_id)
        meta = json.loads(meta_path.read_text())
        label = self._label_path(cloud_id)
        return CloudRecord(cloud_id=meta["cloud_id"],
                           ply_path=self.clouds_dir / f"{cloud_id}.ply",
                           point_count=meta["point_count"],
                           uploaded_at=meta["uploaded_at"],
                           label_path=label if label.exists() else None)

    def list_records(self):
        ids = sorted(p.name[:-len(".meta.json")]
                     for p in self.clouds_dir.glob("*.meta.json"))
        return [self.get_record(cid) for cid in ids]

    def load_cloud(self, cloud_id):
        record = self.get_record(cloud_id)
        return load_ply(record.ply_path)

    # -- labels ------------------------------------------------------------

    def put_label(self, cloud_id, raw_bytes):
        if not self.has_cloud(cloud_id):
            raise KeyError(cloud_id)
        with self._lock:
            atomic_write(self._label_path(cloud_id), raw_bytes)

    def get_label_bytes(self, cloud_id):
        path = self._label_path(cloud_id)
        if not path.exists():
            raise KeyError(cloud_id)
        return path.read_bytes()

    def delete_label(self, cloud_id):
        path = self._label_path(cloud_id)
        if not path.exists():
            raise KeyError(cloud_id)
        path.unlink()
