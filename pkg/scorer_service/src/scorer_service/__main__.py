"""Run the sidecar: ``python -m scorer_service``.

Environment: ``MODEL_NAME`` selects the backend (``stub`` or a pretrained
CLIP checkpoint name), ``DEVICE`` the torch device, ``PORT`` the listen port.
One checkpoint per process.
"""

import os

import uvicorn

from .app import create_app


def main() -> int:
    model_name = os.environ.get("MODEL_NAME", "stub")
    device = os.environ.get("DEVICE", "cpu")
    port = int(os.environ.get("PORT", "8940"))
    app = create_app(model_name=model_name, device=device)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
