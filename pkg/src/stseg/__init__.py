"""Punctuation-driven segmentation for streaming long-form speech translation."""

from stseg.lattice import (
    CtcLattice,
    SegmentBoundary,
    SpeechBlock,
    Trigger,
    Vocabulary,
    append_lattice,
    lattice_slice,
    make_vocabulary,
)

__all__ = [
    "CtcLattice",
    "SegmentBoundary",
    "SpeechBlock",
    "Trigger",
    "Vocabulary",
    "append_lattice",
    "lattice_slice",
    "make_vocabulary",
]

__version__ = "0.1.0"
