"""
contracts/caption_contract.py
=============================
Image captioning contract: question-aware captions and local captions.

Extends: BackendBase

A question-aware caption describes the image with respect to a text prompt.
Local captions describe several image regions and are used as extra knowledge.
"""

from abc import abstractmethod

from .base import BackendBase


class CaptionContract(BackendBase):
    """Abstract contract for captioning backends."""

    @abstractmethod
    async def caption(self, image_ref: str, prompt: str) -> str:
        """
        Caption an image conditioned on a prompt.

        Raises:
            ImageNotFoundError: image_ref cannot be resolved
            TransportError: Connection or server failure (retryable)
            MalformedResponseError: Response not in the expected shape
        """

    @abstractmethod
    async def local_captions(self, image_ref: str, count: int) -> list[str]:
        """
        Produce up to count captions of image regions.

        Duplicates may be returned; the hub removes them.
        """
