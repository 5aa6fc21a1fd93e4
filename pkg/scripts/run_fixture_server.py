#!/usr/bin/env python3
"""Serve fixture models (and optionally a fixture hub listing) over HTTP until interrupted.

    python scripts/run_fixture_server.py --models tests/fixtures/models.json --port 8765
    python scripts/run_fixture_server.py --hub-rows rows.json --port 8766

Model invocations: POST /models/<id> {"task_type", "args"} -> {"output"}.
Hub listing: GET /api/models?pipeline_tag=&sort=&limit=.
"""

import argparse
import json
import time

from esp.fixtures import FixtureHub, FixtureModels, FixtureModelServer, ModelBehavior


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", help="model behaviour JSON ({default, models})")
    ap.add_argument("--hub-rows", help="JSON list of hub rows {id, pipeline_tag, downloads, likes, trending}")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8765)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    fixtures = FixtureModels.from_file(args.models, args.seed) if args.models else FixtureModels(default=ModelBehavior())
    hub = None
    if args.hub_rows:
        with open(args.hub_rows) as fh:
            hub = FixtureHub(json.load(fh))
    with FixtureModelServer(fixtures, hub, args.host, args.port) as srv:
        print(f"serving on {srv.url}", flush=True)
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            pass
        print(f"{len(fixtures.calls)} model calls, {srv.hub_calls} hub calls, max in flight {fixtures.max_in_flight}")


if __name__ == "__main__":
    main()
