"""Shared test utilities: seeded in-process app and a tiny JSON client."""
from __future__ import annotations

import json

from mediflow.server import Application, seed_demo

# keeps password hashing out of test runtimes; production default stays high
FAST_PBKDF2 = 100

PHYSICIAN = {"username": "physician1", "password": "phys-pass"}
DEVICE1 = {"username": "dev1", "password": "device-pass",
           "mac": "AA:BB:CC:DD:00:01"}
PATIENT1 = "pat-001"


def make_app(clock=None, devices=1, volume_ml=2.0, rate_ml_h=4.0, store=None,
             ttl_s=300.0, **kwargs) -> Application:
    app = Application(store=store, clock=clock, ttl_s=ttl_s,
                      pbkdf2_iterations=FAST_PBKDF2, **kwargs)
    seed_demo(app, devices=devices, volume_ml=volume_ml, rate_ml_h=rate_ml_h)
    return app


class Api:
    """In-process request helper returning (status, payload)."""

    def __init__(self, app: Application) -> None:
        self.app = app

    def call(self, method: str, path: str, token: str | None = None,
             body: dict | None = None) -> tuple[int, dict]:
        headers = {"authorization": f"Bearer {token}"} if token else {}
        raw = json.dumps(body).encode("utf-8") if body is not None else None
        response = self.app.handle(method, path, headers, raw)
        return response.status, response.payload

    def login(self, username: str, password: str, mac: str | None = None) -> tuple[int, dict]:
        body = {"username": username, "password": password}
        if mac is not None:
            body["mac"] = mac
        return self.call("POST", "/api/login", body=body)

    def physician_token(self) -> str:
        status, payload = self.login(**PHYSICIAN)
        assert status == 200, payload
        return payload["token"]

    def device_token(self) -> str:
        status, payload = self.login(**DEVICE1)
        assert status == 200, payload
        return payload["token"]
