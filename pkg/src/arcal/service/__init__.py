from .app import create_app
from .schemas import LabelSchema, TransformSchema
from .storage import CloudStore, atomic_write

__all__ = ["create_app", "LabelSchema", "TransformSchema", "CloudStore",
           "atomic_write"]
