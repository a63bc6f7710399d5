"""Configuration parsing, tabular I/O and the command-line front end."""
from .config import COMMANDS, RunConfig, parse_config
from .tabular import TabularDataset, emit, ingest

__all__ = ["COMMANDS", "RunConfig", "parse_config", "TabularDataset", "emit", "ingest"]
