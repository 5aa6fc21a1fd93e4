"""End-to-end wiring: plan -> select -> execute -> integrate -> respond."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from . import prompts
from .config import Config, LlmSettings
from .core import FinalResponse, SelectionDecision, TaskPlan, UserRequest, load_vocabulary
from .errors import EspError
from .evaluator import Dataset, EvalRecord, MetricReport, RecordScore, aggregate, score_record
from .executor import ExecutionLimits, ExecutionTrace, HttpModelClient, ModelClient, run_plan
from .fixtures import FixtureModels, InProcessModelClient
from .integrator import EmbeddingProvider, integrate
from .llm import LlmProfile, MockBackend
from .planner import PlannerConfig, plan_verbose
from .registry import RankedCatalog, SelectionPolicy, assign_task_type, select_models
from .responder import respond

log = logging.getLogger(__name__)


def request_from_text(text: str) -> UserRequest:
    return UserRequest("req-" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:10], text)


def build_profile(s: LlmSettings, mock_backend: MockBackend | None) -> LlmProfile:
    backend = mock_backend
    if backend is None and s.mock_script:
        backend = MockBackend.from_file(s.mock_script)
    return LlmProfile(
        name=s.name, endpoint=s.endpoint, temperature=s.temperature, max_tokens=s.max_tokens,
        timeout_ms=s.timeout_ms, retries=s.retries, backoff_ms=s.backoff_ms, rate_limit=s.rate_limit,
        api_key_env=s.api_key_env, backend=backend,
    )


@dataclass
class RunOutcome:
    request: UserRequest
    plan: TaskPlan
    trace: ExecutionTrace
    decisions: dict[int, SelectionDecision]
    response: FinalResponse


class Orchestrator:
    def __init__(
        self,
        cfg: Config,
        *,
        mock: bool = False,
        seed: int = 0,
        catalog: RankedCatalog | None = None,
        client: ModelClient | None = None,
    ):
        self.cfg = cfg
        self.vocabulary = load_vocabulary(cfg.vocabulary)
        shared_mock = None
        if mock:
            if not cfg.mock_llm_script:
                raise EspError("--mock needs mock.llm_script in the config")
            shared_mock = MockBackend.from_file(cfg.mock_llm_script)
        self.llm = {role: build_profile(s, shared_mock) for role, s in cfg.llm.items()}
        self._catalog = catalog
        if client is None:
            if mock:
                if not cfg.mock_models:
                    raise EspError("--mock needs mock.models in the config")
                client = InProcessModelClient(FixtureModels.from_file(cfg.mock_models, seed=seed))
            else:
                client = HttpModelClient()
        self.client = client
        self.policy = SelectionPolicy(cfg.k, cfg.metric_order)
        self.limits = ExecutionLimits(cfg.parallelism, cfg.timeout_ms)
        self.provider = EmbeddingProvider(
            name=cfg.embedding_mode, dimension=cfg.embedding_dimension, mode=cfg.embedding_mode,
            endpoint=cfg.embedding_endpoint,
        )
        p = cfg.prompts
        self.planner_cfg = PlannerConfig.from_files(p.get("planner"), p.get("demonstrations"), cfg.max_repair_rounds)
        if "repair" in p:
            self.planner_cfg.repair_template = prompts.load_template(p["repair"])
        self.templates = {k: prompts.load_template(p.get(k, k)) for k in ("arbitration", "response", "judge", "assign")}

    @property
    def catalog(self) -> RankedCatalog:
        if self._catalog is None:
            if not self.cfg.catalog:
                raise EspError("no catalog snapshot configured; run `esp sync` first")
            self._catalog = RankedCatalog.load(self.cfg.catalog)
        return self._catalog

    def plan(self, request: UserRequest) -> TaskPlan:
        return plan_verbose(request, self.planner_cfg, self.llm["planner"], self.vocabulary).plan

    def _assign(self, plan: TaskPlan) -> TaskPlan:
        if "assigner" not in self.llm:
            return plan
        subs = []
        for s in plan.subtasks:
            tt = assign_task_type(s, self.catalog, self.llm["assigner"], self.vocabulary, self.templates["assign"])
            subs.append(replace(s, task_type=tt) if tt != s.task_type else s)
        return TaskPlan(plan.request_id, tuple(subs))

    def execute(self, plan: TaskPlan) -> tuple[ExecutionTrace, dict[int, SelectionDecision]]:
        catalog = self.catalog

        def select(subtask):
            return select_models(subtask.task_type, catalog, self.policy)

        def integrate_hook(subtask, ok, resolved_args):
            return integrate(subtask, ok, self.provider, self.llm["arbiter"], self.templates["arbitration"],
                             resolved_args)

        return run_plan(plan, select, integrate_hook, self.limits, self.client)

    def run(self, request: UserRequest) -> RunOutcome:
        plan = self._assign(self.plan(request))
        trace, decisions = self.execute(plan)
        response = respond(request, plan, trace, decisions, self.llm["responder"], self.templates["response"])
        return RunOutcome(request, plan, trace, decisions, response)

    # -- evaluation --

    def _score(self, rec: EvalRecord, planner_only: bool) -> RecordScore:
        request = UserRequest(rec.id, rec.text)
        error = ""
        pred = None
        try:
            pred = self._assign(self.plan(request))
            if not planner_only:
                self.execute(pred)
        except EspError as exc:
            log.warning("record %s: %s", rec.id, exc)
            error = f"{type(exc).__name__}: {exc}"
        scored = score_record(replace(rec, predicted_plan=pred), self.llm.get("judge"))
        scored.error = error
        return scored

    def evaluate(self, dataset: Dataset, planner_only: bool = False) -> tuple[MetricReport, list[RecordScore]]:
        with ThreadPoolExecutor(max_workers=self.cfg.eval_workers) as pool:
            scores = list(pool.map(lambda r: self._score(r, planner_only), dataset.records))
        return aggregate(scores), scores
