"""Thin client for the engine service.

The CLI talks to the FastAPI app through this wrapper.  By default requests
run against an in-process ASGI transport, so no server needs to be running;
pass a base URL to target a remote deployment instead.
"""

from __future__ import annotations

import warnings

import httpx


class ServiceClient:
    def __init__(self, url: str | None = None, timeout: float = 300.0):
        if url:
            self._client = httpx.Client(base_url=url.rstrip("/"), timeout=timeout)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from starlette.testclient import TestClient

            from .service.app import app

            self._client = TestClient(app)

    def get(self, path: str, **kwargs) -> httpx.Response:
        return self._client.get(path, **kwargs)

    def post(self, path: str, json: dict | None = None, **kwargs) -> httpx.Response:
        return self._client.post(path, json=json, **kwargs)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
