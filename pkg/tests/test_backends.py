from __future__ import annotations

import asyncio

import pytest

from conftest import make_utterance, run, stub_spec
from normbridge.backends import (
    BackendError,
    BackendRequest,
    BackendSet,
    BothBackendsFailed,
    BoundBackend,
    FaultInjector,
    Task,
    build_backend_set,
    invoke_with_fallback,
    parse_generation,
    parse_lexicon,
)
from normbridge.backends.parsing import ParseError
from normbridge.backends.stubs import (
    DictionaryMtStub,
    IdentityAsrStub,
    RuleCategoryStub,
    RuleImpactStub,
    RuleViolationStub,
    TemplateRemediationStub,
)
from normbridge.model import CategorySet, Impact, Provenance
from conftest import CATEGORY_NAMES


def bound(task: Task, fn, timeout_s: float = 0.5) -> BoundBackend:
    return BoundBackend(stub_spec(task, timeout_s=timeout_s), fn)


def request(task: Task = Task.ASR, text: str = "hello") -> BackendRequest:
    return BackendRequest(task, make_utterance(source_text=text, translated_text=text))


async def ok_backend(_req):
    return {"text": "fine"}


async def slow_backend(_req):
    await asyncio.sleep(5.0)
    return {"text": "too late"}


async def broken_backend(_req):
    raise BackendError("kaput")


class TestFallback:
    def test_primary_success_keeps_primary_provenance(self) -> None:
        resp = run(invoke_with_fallback(bound(Task.ASR, ok_backend), None, request()))
        assert resp.provenance is Provenance.PRIMARY
        assert resp.payload == {"text": "fine"}
        assert resp.latency_s <= 0.5  # within the configured timeout

    def test_primary_timeout_activates_backup(self) -> None:
        resp = run(
            invoke_with_fallback(
                bound(Task.ASR, slow_backend, timeout_s=0.05),
                bound(Task.ASR, ok_backend),
                request(),
            )
        )
        assert resp.provenance is Provenance.BACKUP

    def test_primary_error_activates_backup(self) -> None:
        resp = run(
            invoke_with_fallback(
                bound(Task.ASR, broken_backend), bound(Task.ASR, ok_backend), request()
            )
        )
        assert resp.provenance is Provenance.BACKUP

    def test_error_without_backup_exhausts(self) -> None:
        with pytest.raises(BothBackendsFailed):
            run(invoke_with_fallback(bound(Task.ASR, broken_backend), None, request()))

    def test_both_failing_exhausts(self) -> None:
        with pytest.raises(BothBackendsFailed):
            run(
                invoke_with_fallback(
                    bound(Task.ASR, broken_backend), bound(Task.ASR, broken_backend), request()
                )
            )

    def test_invalid_primary_payload_falls_back(self) -> None:
        async def junk(_req):
            return {"nonsense": True}

        def validate(payload):
            if "text" not in payload:
                raise BackendError("no text")
            return payload["text"]

        resp = run(
            invoke_with_fallback(
                bound(Task.ASR, junk), bound(Task.ASR, ok_backend), request(), validate
            )
        )
        assert resp.provenance is Provenance.BACKUP
        assert resp.payload == "fine"

    def test_fallback_rate_tracks_injected_failure_rate(self) -> None:
        async def scenario() -> float:
            injector = FaultInjector(ok_backend, failure_rate=0.3, seed=0)
            primary = bound(Task.ASR, injector)
            backup = bound(Task.ASR, ok_backend)
            backup_used = 0
            for _ in range(1000):
                resp = await invoke_with_fallback(primary, backup, request())
                if resp.provenance is Provenance.BACKUP:
                    backup_used += 1
            assert injector.calls == 1000
            assert backup_used == injector.failures
            return backup_used / 1000

        rate = run(scenario())
        assert abs(rate - 0.3) <= 0.02


class TestStubs:
    def test_asr_identity(self) -> None:
        payload = run(IdentityAsrStub()(request(text="just words")))
        assert payload == {"text": "just words"}

    def test_mt_dictionary_bidirectional_with_passthrough(self) -> None:
        stub = DictionaryMtStub({"hello": "你好", "friend": "朋友"})
        out = run(stub(request(text="hello dear friend")))
        assert out == {"text": "你好 dear 朋友"}
        back = run(stub(request(text="你好")))
        assert back == {"text": "hello"}

    def test_category_rule_hit_and_default_other(self) -> None:
        cats = CategorySet(CATEGORY_NAMES)
        stub = RuleCategoryStub(parse_lexicon(["sorry\tapology"]), cats)
        hit = run(stub(request(text="so sorry about that")))
        assert hit == {"label": "apology"}
        miss = run(stub(request(text="nothing to see")))
        assert miss == {"label": "Other"}

    def test_category_spread_distribution_sums_to_one(self) -> None:
        cats = CategorySet(CATEGORY_NAMES)
        stub = RuleCategoryStub(parse_lexicon(["sorry\tapology"]), cats, spread=0.3)
        payload = run(stub(request(text="sorry")))
        assert abs(sum(payload["probs"]) - 1.0) < 1e-9
        assert payload["probs"][cats.index("apology")] == pytest.approx(0.7)

    def test_category_rejects_unknown_label(self) -> None:
        with pytest.raises(ValueError):
            RuleCategoryStub(parse_lexicon(["x\tnot-a-category"]), CategorySet(CATEGORY_NAMES))

    def test_violation_lexicon_hit_and_empty_lexicon(self) -> None:
        stub = RuleViolationStub(parse_lexicon(["shut up\t1"]))
        assert run(stub(request(text="oh shut up now")))["violated"] is True
        assert run(stub(request(text="good morning")))["violated"] is False
        empty = RuleViolationStub([])
        assert run(empty(request(text="anything at all")))["violated"] is False

    def test_violation_spread_probs(self) -> None:
        stub = RuleViolationStub(parse_lexicon(["bad\t1"]), spread=0.2)
        payload = run(stub(request(text="bad words")))
        assert payload["probs"] == pytest.approx([0.2, 0.8])
        assert abs(sum(payload["probs"]) - 1.0) < 1e-9

    def test_impact_marker_anywhere_in_window(self) -> None:
        stub = RuleImpactStub(parse_lexicon(["insult\thigh"]))
        current = make_utterance(uid="t3", translated_text="a mild remark")
        previous = make_utterance(uid="t2", translated_text="that insult was bad")
        req = BackendRequest(Task.IMPACT_CLS, current, (previous,))
        assert run(stub(req)) == {"label": "High"}
        alone = BackendRequest(Task.IMPACT_CLS, current, ())
        assert run(stub(alone)) == {"label": "Low"}

    def test_impact_accepts_window_of_one(self) -> None:
        stub = RuleImpactStub(parse_lexicon(["insult\thigh"]))
        req = BackendRequest(Task.IMPACT_CLS, make_utterance(translated_text="insult!"), ())
        assert run(stub(req)) == {"label": "High"}

    def test_remediation_template_softens(self) -> None:
        stub = TemplateRemediationStub(parse_lexicon(["shut up\t1"]))
        payload = run(stub(request(text="Shut up and listen to me")))
        assert payload["text"].startswith("Could you please ")
        assert "shut up" not in payload["text"].lower()

    def test_stubs_are_pure(self) -> None:
        stub = RuleViolationStub(parse_lexicon(["bad\t1"]))
        req = request(text="bad stuff")
        assert run(stub(req)) == run(stub(req))

    def test_lexicon_parsing_errors(self) -> None:
        with pytest.raises(ValueError, match="pattern<TAB>label"):
            parse_lexicon(["no-tab-here"])
        with pytest.raises(ValueError, match="bad pattern"):
            parse_lexicon(["([\tbroken"])
        assert parse_lexicon(["# comment", "", "ok\tlabel"]) != []

    def test_lexicon_file_resolved_against_config_dir(self, tmp_path) -> None:
        (tmp_path / "violations.lex").write_text(
            "# violation patterns\nshut up\t1\nnonsense\t1\n", encoding="utf-8"
        )
        from normbridge.backends.stubs import build_stub

        stub = build_stub(
            Task.VIOLATION_CLS, {"lexicon": "violations.lex"}, None, base_dir=tmp_path
        )
        assert run(stub(request(text="utter nonsense")))["violated"] is True


class TestParseGeneration:
    def test_canonical_form(self) -> None:
        assert parse_generation("Remediation: X\nJustification: Y") == ("X", "Y")

    def test_reversed_order_and_case(self) -> None:
        raw = "JUSTIFICATION: because norms\nremediation: softer words"
        assert parse_generation(raw) == ("softer words", "because norms")

    def test_multiline_bodies(self) -> None:
        raw = "Remediation: line one\nline two\nJustification: why\nand more"
        rem, just = parse_generation(raw)
        assert rem == "line one\nline two"
        assert just == "why\nand more"

    def test_missing_labels_rejected(self) -> None:
        with pytest.raises(ParseError):
            parse_generation("no labels at all")
        with pytest.raises(ParseError):
            parse_generation("Remediation: only half")
        with pytest.raises(ParseError):
            parse_generation("")

    def test_explanation_alias(self) -> None:
        rem, just = parse_generation("Remediation: R\nExplanation: E")
        assert (rem, just) == ("R", "E")


class TestRemoteAdapter:
    def make_backend(self, handler) -> "object":
        import httpx

        from normbridge.backends.remote import RemoteHttpBackend

        transport = httpx.MockTransport(handler)
        client = httpx.AsyncClient(transport=transport)
        return RemoteHttpBackend("http://inference.test/v1", timeout_s=3.0, client=client)

    def test_posts_task_context_and_current(self) -> None:
        import httpx

        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            import json

            seen.update(json.loads(request.content))
            return httpx.Response(200, json={"label": "apology", "probs": None})

        backend = self.make_backend(handler)
        context = (make_utterance(uid="t1", translated_text="earlier"),)
        req = BackendRequest(
            Task.CATEGORY_CLS,
            make_utterance(uid="t2", translated_text="sorry"),
            context,
            category=None,
        )
        payload = run(backend(req))
        assert payload["label"] == "apology"
        assert seen["task"] == "CategoryCls"
        assert seen["current"]["id"] == "t2"
        assert [u["id"] for u in seen["context"]] == ["t1"]

    def test_http_error_becomes_backend_error(self) -> None:
        import httpx

        def handler(_request: httpx.Request) -> httpx.Response:
            return httpx.Response(503, text="overloaded")

        backend = self.make_backend(handler)
        with pytest.raises(BackendError):
            run(backend(BackendRequest(Task.REMEDIATION_GEN, make_utterance())))

    def test_category_and_remediation_fields_forwarded(self) -> None:
        import httpx
        import json

        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen.update(json.loads(request.content))
            return httpx.Response(200, json={"text": "softer"})

        backend = self.make_backend(handler)
        req = BackendRequest(
            Task.JUSTIFICATION_GEN,
            make_utterance(),
            category="criticism",
            remediation="softer words",
        )
        run(backend(req))
        assert seen["category"] == "criticism"
        assert seen["remediation"] == "softer words"


class TestBackendSet:
    def make_set(self, categories: CategorySet, **overrides) -> BackendSet:
        specs = {
            Task.ASR: (stub_spec(Task.ASR), None),
            Task.MT: (stub_spec(Task.MT, {"dictionary": {}}), None),
            Task.CATEGORY_CLS: (
                stub_spec(Task.CATEGORY_CLS, {"rules": [["sorry", "apology"]]}),
                None,
            ),
            Task.VIOLATION_CLS: (
                stub_spec(Task.VIOLATION_CLS, {"rules": [["rude", "1"]]}),
                None,
            ),
            Task.IMPACT_CLS: (stub_spec(Task.IMPACT_CLS, {"rules": [["awful", "high"]]}), None),
            Task.REMEDIATION_GEN: (stub_spec(Task.REMEDIATION_GEN), None),
            Task.JUSTIFICATION_GEN: (stub_spec(Task.JUSTIFICATION_GEN), None),
        }
        specs.update(overrides)
        return build_backend_set(specs, categories)

    def test_classify_category_returns_valid_distribution(self, categories) -> None:
        backends = self.make_set(categories)
        label, probs, prov = run(
            backends.classify_category([], make_utterance(translated_text="sorry!"))
        )
        assert label == "apology"
        assert len(probs) == 8
        assert abs(sum(probs) - 1.0) < 1e-9
        assert probs[categories.index("apology")] == 1.0
        assert prov is Provenance.PRIMARY

    def test_detect_violation_degenerate_distribution(self, categories) -> None:
        backends = self.make_set(categories)
        violated, probs, _ = run(
            backends.detect_violation([], make_utterance(translated_text="rude words"), "Other")
        )
        assert violated is True
        assert probs == [0.0, 1.0]

    def test_classify_impact(self, categories) -> None:
        backends = self.make_set(categories)
        impact, _ = run(backends.classify_impact([make_utterance(translated_text="awful")]))
        assert impact is Impact.HIGH
        impact, _ = run(backends.classify_impact([make_utterance(translated_text="fine")]))
        assert impact is Impact.LOW

    def test_generation_pipeline_texts(self, categories) -> None:
        backends = self.make_set(categories)
        current = make_utterance(translated_text="rude words here")
        remediation, _ = run(backends.generate_remediation([], current, category="criticism"))
        assert remediation.startswith("Could you please")
        justification, _ = run(
            backends.generate_justification([], current, remediation, category="criticism")
        )
        assert "criticism" in justification

    def test_combined_blob_split_by_parser(self, categories) -> None:
        async def combined(_req):
            return {"text": "Remediation: softened\nJustification: norms differ"}

        backends = self.make_set(categories)
        backends._routes[Task.REMEDIATION_GEN] = (
            BoundBackend(stub_spec(Task.REMEDIATION_GEN), combined),
            None,
        )
        backends._routes[Task.JUSTIFICATION_GEN] = (
            BoundBackend(stub_spec(Task.JUSTIFICATION_GEN), combined),
            None,
        )
        current = make_utterance(translated_text="rude")
        rem, _ = run(backends.generate_remediation([], current))
        just, _ = run(backends.generate_justification([], current, rem))
        assert rem == "softened"
        assert just == "norms differ"

    def test_empty_generation_is_backend_error(self, categories) -> None:
        async def empty(_req):
            return {"text": "   "}

        backends = self.make_set(categories)
        backends._routes[Task.REMEDIATION_GEN] = (
            BoundBackend(stub_spec(Task.REMEDIATION_GEN), empty),
            None,
        )
        with pytest.raises(BothBackendsFailed):
            run(backends.generate_remediation([], make_utterance(translated_text="x")))

    def test_missing_task_route_rejected(self, categories) -> None:
        with pytest.raises(ValueError, match="no backend configured"):
            BackendSet({}, categories)
