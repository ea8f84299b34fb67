"""
schemas/study.py

This module defines the Pydantic models for rows of the human evaluation files.

Classes:
- RaterScore: One binary score given by a rater to one panel tile.
- RealnessCall: One real-or-fake call on a single image.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

Criterion = Literal['identity', 'healthiness', 'deformation_correction']
CRITERIA = ('identity', 'healthiness', 'deformation_correction')


class RaterScore(BaseModel):
    """
    Schema for a rater's binary score of one tile of a panel.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    rater_id: str = Field(..., min_length=1, description="Rater identifier")
    panel_id: str = Field(..., min_length=1, description="Panel identifier")
    position: int = Field(..., ge=0, description="Tile position of the synthetic image in the panel")
    criterion: Criterion = Field(..., description="Scored criterion")
    score: Literal[0, 1] = Field(..., description="Binary score")


class RealnessCall(BaseModel):
    """
    Schema for a rater's real-or-fake call on one image.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    rater_id: str = Field(..., min_length=1, description="Rater identifier")
    image_id: str = Field(..., min_length=1, description="Image identifier")
    call: Literal['real', 'fake'] = Field(..., description="Rater decision")
