"""
schemas: JSON Schema of every document the package writes or reads
"""
import argparse
import json
import logging

from ..models.schemas import EXPORTED_SCHEMAS
from .common import writer_for

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("schemas", help="Write the JSON Schemas of all documents")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    writer = writer_for(args)
    for name, model in EXPORTED_SCHEMAS.items():
        writer.write_text(f"{name}.schema.json", json.dumps(model.model_json_schema(by_alias=True), indent=2))
    writer.write_manifest("schemas", None, {})
    return 0
