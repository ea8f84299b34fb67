"""
models/panel.py

This module defines the record of one blinded evaluation panel.

Classes:
- Panel: Input slice, ground-truth mask and the shuffled synthetic tiles.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Panel:
    """
    Represents one panel shown to raters.

    The method that produced each tile is deliberately absent: the mapping from
    position to method lives only in the blinding map.

    Attributes:
        panel_id (str): Panel identifier.
        image (np.ndarray): The pathological input slice.
        mask (np.ndarray): Its ground-truth mask.
        tiles (list): Synthetic images in presentation order.
    """
    panel_id: str
    image: np.ndarray
    mask: np.ndarray
    tiles: list = field(default_factory=list)

    def __repr__(self):
        return f'<Panel {self.panel_id} tiles={len(self.tiles)}>'
