#!/usr/bin/env python3
"""
Remote Inference Client

HTTP adapter for an external inference service hosting the scene embedder
and the zero-shot weather classifier. Implements the SceneEmbedder and
ZeroShotClassifier contracts of sed, so Thread E can use it in place of the
local deterministic stand-ins.

Endpoints (JSON over HTTP POST):
    /embed     {"image": <base64 PNG>}                     -> {"embedding": [...]}
    /classify  {"image": <base64 PNG>, "prompts": [...]}   -> {"scores": [...]}

Features:
    - Optional bearer token read from a token file
    - One token reload and retry on HTTP 401
    - Returned embeddings are checked and L2-normalised
"""

import base64
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import requests

from imaging import encode_png
from sed import normalise

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 5.0


class InferenceError(RuntimeError):
    """Raised when the inference service cannot be reached or answers badly"""


class RemoteInferenceClient:
    """Client for the embedder / zero-shot classifier service"""

    def __init__(self, base_url: str, token_file: Optional[str] = None,
                 timeout: float = DEFAULT_TIMEOUT):
        """
        Initialize the RemoteInferenceClient.

        Args:
            base_url: Service root, e.g. http://localhost:8600
            token_file: File holding a bearer token; no auth header when None
            timeout: Per-request timeout in seconds
        """
        self.base_url = base_url.rstrip('/')
        self.token_file = token_file
        self.timeout = timeout
        self.token = self._load_token()
        logger.info(f"Initialized RemoteInferenceClient for {self.base_url}")

    def _load_token(self) -> Optional[str]:
        """Read the bearer token from its file"""
        if not self.token_file:
            return None
        try:
            with open(self.token_file, 'r') as f:
                token = f.read().strip()
            logger.debug("Bearer token loaded from file")
            return token or None
        except FileNotFoundError:
            logger.warning(f"Token file {self.token_file} not found, sending requests without a token")
            return None

    def _get_headers(self) -> Dict[str, str]:
        headers = {
            "Content-Type": "application/json",
            "Accept": "application/json",
        }
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _make_request(self, *args, **kwargs):
        return requests.request(*args, **kwargs)

    def _post(self, endpoint: str, payload: Dict) -> Dict:
        url = f"{self.base_url}/{endpoint}"
        retried = False
        while True:
            try:
                response = self._make_request(
                    method="POST",
                    url=url,
                    headers=self._get_headers(),
                    json=payload,
                    timeout=self.timeout,
                )
                response.raise_for_status()
                return response.json()
            except requests.exceptions.HTTPError as e:
                if e.response is not None and e.response.status_code == 401 and not retried:
                    logger.warning("Inference token rejected, reloading...")
                    self.token = self._load_token()
                    retried = True
                    continue
                logger.error(f"HTTP error from {url}: {str(e)}")
                raise InferenceError(f"{endpoint}: {e}") from e
            except requests.exceptions.RequestException as e:
                logger.error(f"Error calling {url}: {str(e)}")
                raise InferenceError(f"{endpoint}: {e}") from e
            except ValueError as e:
                raise InferenceError(f"{endpoint}: response is not JSON") from e

    @staticmethod
    def _image_payload(frame: np.ndarray) -> str:
        return base64.b64encode(encode_png(frame)).decode('ascii')

    def embed(self, frame: np.ndarray) -> np.ndarray:
        body = self._post('embed', {"image": self._image_payload(frame)})
        try:
            vector = np.asarray(body['embedding'], dtype=np.float64)
            return normalise(vector)
        except (KeyError, TypeError, ValueError) as e:
            raise InferenceError(f"embed: malformed embedding in response: {e}") from e

    def classify_prompts(self, frame: np.ndarray, prompts: Sequence[str]) -> List[float]:
        body = self._post('classify', {"image": self._image_payload(frame), "prompts": list(prompts)})
        scores = body.get('scores') if isinstance(body, dict) else None
        if not isinstance(scores, list) or len(scores) != len(prompts):
            raise InferenceError(f"classify: expected {len(prompts)} scores, got {scores!r}")
        return [float(s) for s in scores]
