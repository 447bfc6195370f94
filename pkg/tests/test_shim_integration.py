"""Live wire-protocol tests against the out-of-process stub service.

These run only when the shim is built (node present and modelshim/dist
compiled); the primary acceptance suite never requires them.
"""

import json
import re
import shutil
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from mmrag.core import ImageRef, TextSegment
from mmrag.gateway import GatewayError, HTTPBackendClient, ReferenceEmbedder

ROOT = Path(__file__).resolve().parent.parent
SERVER_JS = ROOT / "modelshim" / "dist" / "src" / "server.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not SERVER_JS.exists(),
    reason="modelshim not built; run `npm install && npm run build` in modelshim/",
)


@pytest.fixture(scope="module")
def shim_url(tmp_path_factory):
    fixtures = tmp_path_factory.mktemp("shim") / "fixtures.json"
    fixtures.write_text(json.dumps(
        {"default": "UNKNOWN", "rules": [{"contains": "ledger", "text": "amber vault 007"}]}
    ), "utf-8")
    proc = subprocess.Popen(
        ["node", str(SERVER_JS), "--port", "0", "--fixtures", str(fixtures),
         "--dims", "2048,1024,512,256,128,64,8"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True,
    )
    try:
        line = proc.stdout.readline()
        m = re.search(r"listening on .*:(\d+)", line)
        assert m, f"unexpected server banner: {line!r}"
        yield f"http://127.0.0.1:{m.group(1)}"
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def payload():
    return (
        TextSegment(text="Crème brûlée 北京 interleaved payload!"),
        ImageRef(uri="img://integration/a.png"),
        TextSegment(text="closing words"),
    )


class TestWireProtocol:
    def test_embed_is_byte_identical_to_in_process(self, shim_url):
        client = HTTPBackendClient(shim_url, dim=512)
        local = ReferenceEmbedder(dim=512)
        for role, instruction in (("document", None), ("query", "Find the right document.")):
            remote_vecs = client.embed([payload()], role=role, instruction=instruction)
            local_vecs = local.embed([payload()], role=role, instruction=instruction)
            assert np.array_equal(remote_vecs[0].values, local_vecs[0].values)

    def test_embed_batch_order(self, shim_url):
        client = HTTPBackendClient(shim_url, dim=64)
        local = ReferenceEmbedder(dim=64)
        items = [(TextSegment(text=f"doc number {i}"),) for i in range(5)]
        remote = client.embed(items, role="document")
        expected = local.embed(items, role="document")
        for r, e in zip(remote, expected):
            assert np.array_equal(r.values, e.values)

    def test_generate_scripted_over_the_wire(self, shim_url):
        client = HTTPBackendClient(shim_url)
        reply = client.generate((TextSegment(text="what does the ledger record?"),))
        assert reply.text == "amber vault 007"
        assert reply.finish_reason == "stop"
        fallback = client.generate((TextSegment(text="something else"),))
        assert fallback.text == "UNKNOWN"

    def test_http_error_surfaces_with_endpoint(self, shim_url):
        client = HTTPBackendClient(shim_url, dim=333)  # not on the ladder
        with pytest.raises(GatewayError, match="422"):
            client.embed([payload()], role="document")

    def test_unreachable_backend_error_names_endpoint(self):
        client = HTTPBackendClient("http://127.0.0.1:9", attempts=2, backoff=0.01, timeout=0.5)
        with pytest.raises(GatewayError, match="127.0.0.1:9"):
            client.embed([payload()], role="document")
