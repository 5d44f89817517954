"""Dyad execution: the customer -> worker sequence and a concurrent group runner."""
import concurrent.futures
import time
from typing import Any, Dict, List, Optional

import psutil
from tqdm import tqdm

from ..dataset.records import STATUS_COMPLETE, STATUS_FAILED, DyadRecord, dyad_id_for
from ..dataset.storage import CALL_FAILED, CALL_OK, CALL_PARSE_ERROR, EVENT_END, EVENT_START, utc_now
from ..design.experiment_design import ExperimentCondition, ReplicationPlan, derive_seed
from ..utils.config import DEFAULT_CONFIG, logger
from ..utils.data import cents_to_str, sha256_text, to_cents
from ..utils.errors import CredentialError, ResponseParseError, TransportError
from .parsing import CustomerResult, parse_customer_response, parse_worker_response
from .vignettes import PromptBundle, VignetteLibrary, build_customer_prompt, build_worker_prompt

DEFAULT_REMINDER = DEFAULT_CONFIG["agent"]["reprompt_reminder"]


class _Call:
    """Journal context for one agent call within a dyad."""

    def __init__(self, journal, group_id, dyad_id, condition, replicate, seed, price_cents, tip_cents):
        self.journal = journal
        self.fields = {
            "group_id": group_id,
            "dyad_id": dyad_id,
            "condition": condition.to_dict(),
            "replicate": replicate,
            "seed": seed,
            "price": cents_to_str(price_cents),
            "initial_tip": cents_to_str(tip_cents),
        }

    def emit(self, kind, **extra):
        if self.journal is not None:
            self.journal.event(kind, **self.fields, **extra)


def _ask(agent, bundle: PromptBundle, parse, replicate_seed: int, call: _Call, reminder: str):
    """Send ``bundle`` and parse the answer, re-prompting on parse failure.

    Every send counts against the agent's retry budget.

    Returns:
        tuple: (parsed result or None, error message or None)
    """
    role = bundle.role.value
    budget = agent.max_retries + 1
    error = None
    for attempt in range(1, budget + 1):
        text = bundle.text if attempt == 1 else f"{bundle.text}\n\n{reminder}"
        seed = derive_seed(replicate_seed, role, attempt)
        call.emit(EVENT_START, role=role, attempt=attempt, call_seed=seed, prompt_hash=sha256_text(text))
        try:
            raw = agent.respond(bundle, seed, text=text)
        except TransportError as e:
            error = f"transport error after {e.attempts} attempts (status {e.last_status}): {e}"
            call.emit(EVENT_END, role=role, attempt=attempt, status=CALL_FAILED, error=error,
                      attempts=e.attempts, raw_text=None, parsed=None)
            return None, error
        try:
            parsed = parse(raw)
        except ResponseParseError as e:
            error = f"{type(e).__name__}: {e}"
            final = attempt == budget
            logger.warning(f"{call.fields['group_id']}/{call.fields['dyad_id']} {role} parse failure "
                           f"(attempt {attempt}/{budget}): {e}")
            call.emit(EVENT_END, role=role, attempt=attempt, status=CALL_FAILED if final else CALL_PARSE_ERROR,
                      error=error, attempts=raw.attempts, raw_text=raw.text, parsed=None,
                      latency=round(raw.latency, 6))
            continue
        call.emit(EVENT_END, role=role, attempt=attempt, status=CALL_OK, error=None, attempts=raw.attempts,
                  raw_text=raw.text, parsed=parsed.to_dict(), latency=round(raw.latency, 6),
                  provider_metadata=raw.provider_metadata)
        return parsed, None
    return None, f"parse failed after {budget} attempts: {error}"


def run_dyad(condition: ExperimentCondition, replicate_seed: int, customer_agent, worker_agent,
             library: VignetteLibrary, price, initial_tip, run_id: str = "", group_id: str = "",
             replicate: int = 1, journal=None, reminder: str = DEFAULT_REMINDER,
             customer_result: Optional[CustomerResult] = None) -> DyadRecord:
    """Execute one dyad: customer prompt, customer parse, worker prompt, worker parse.

    Args:
        condition: Design cell
        replicate_seed: Plan seed of this replicate
        customer_agent, worker_agent: Objects with ``respond(bundle, seed, text=None)``
            and ``max_retries``
        library: Vignette library
        price, initial_tip: Currency amounts
        journal: Optional JournalWriter receiving start/end events per call
        customer_result: Already journaled customer result (resume); the
            customer call is then skipped

    Returns:
        DyadRecord, status ``failed`` when either member could not be obtained
    """
    price_cents, tip_cents = to_cents(price), to_cents(initial_tip)
    dyad_id = dyad_id_for(condition, replicate)
    call = _Call(journal, group_id, dyad_id, condition, replicate, replicate_seed, price_cents, tip_cents)
    started = utc_now()

    def record(customer=None, worker=None, failure=None):
        return DyadRecord(run_id, group_id, dyad_id, condition, replicate, price_cents, tip_cents,
                          customer, worker, replicate_seed, STATUS_FAILED if failure else STATUS_COMPLETE,
                          failure, started, utc_now())

    customer = customer_result
    if customer is None:
        bundle = build_customer_prompt(library, condition, price, initial_tip)
        customer, error = _ask(customer_agent, bundle,
                               lambda raw: parse_customer_response(raw, condition, tip_cents),
                               replicate_seed, call, reminder)
        if customer is None:
            logger.error(f"{group_id}/{dyad_id} failed at customer stage: {error}")
            return record(failure=f"customer: {error}")

    bundle = build_worker_prompt(library, condition, customer, initial_tip)
    worker, error = _ask(worker_agent, bundle, parse_worker_response, replicate_seed, call, reminder)
    if worker is None:
        logger.error(f"{group_id}/{dyad_id} failed at worker stage: {error}")
        return record(customer=customer, failure=f"worker: {error}")
    return record(customer=customer, worker=worker)


class DyadRunner:
    """Runs the dyads of a replication plan for one group concurrently."""

    def __init__(self, config: Dict[str, Any]):
        """Initialize the runner.

        Args:
            config: Dictionary with keys:
                - max_workers: Parallel dyads (default: CPU count)
                - timeout: Total timeout in seconds (default: None)
                - progress: Show a tqdm progress bar (default: True)
        """
        self.config = config
        self.max_workers = config.get('max_workers') or psutil.cpu_count() or 1
        self.timeout = config.get('timeout')
        self.progress = config.get('progress', True)

    def run(self, plan: ReplicationPlan, customer_agent, worker_agent, library: VignetteLibrary,
            price, initial_tip, run_id: str, group_id: str, journal=None,
            reminder: str = DEFAULT_REMINDER,
            completed: Optional[Dict[str, DyadRecord]] = None,
            pending_customers: Optional[Dict[str, CustomerResult]] = None) -> List[DyadRecord]:
        """Run every plan entry not already in ``completed``.

        Args:
            completed: dyad_id -> finished DyadRecord (resume), returned unchanged
            pending_customers: dyad_id -> journaled customer result whose
                worker call is still missing

        Returns:
            list: DyadRecords in plan order, independent of completion order
        """
        completed = dict(completed or {})
        pending_customers = pending_customers or {}
        todo = [e for e in plan.entries if dyad_id_for(e.condition, e.replicate_index) not in completed]
        logger.info(f"Group {group_id}: {len(todo)} dyads to run, {len(completed)} already complete")
        start_time = time.time()
        results: Dict[str, DyadRecord] = {}

        with concurrent.futures.ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_id = {}
            for entry in todo:
                dyad_id = dyad_id_for(entry.condition, entry.replicate_index)
                future = executor.submit(
                    run_dyad, entry.condition, entry.seed, customer_agent, worker_agent, library,
                    price, initial_tip, run_id=run_id, group_id=group_id, replicate=entry.replicate_index,
                    journal=journal, reminder=reminder, customer_result=pending_customers.get(dyad_id))
                future_to_id[future] = dyad_id
            bar = tqdm(total=len(future_to_id), desc=group_id, disable=not self.progress, leave=False)
            try:
                for future in concurrent.futures.as_completed(future_to_id, timeout=self.timeout):
                    dyad_id = future_to_id[future]
                    try:
                        results[dyad_id] = future.result()
                    except CredentialError:
                        for pending in future_to_id:
                            pending.cancel()
                        raise
                    finally:
                        bar.update(1)
            except concurrent.futures.TimeoutError:
                logger.error(f"Group {group_id}: timeout after {self.timeout}s")
                for future in future_to_id:
                    future.cancel()
                raise
            finally:
                bar.close()

        results.update(completed)
        ordered = [results[dyad_id_for(e.condition, e.replicate_index)] for e in plan.entries
                   if dyad_id_for(e.condition, e.replicate_index) in results]
        failed = sum(1 for r in ordered if not r.complete)
        logger.info(f"Group {group_id}: {len(ordered)} dyads in {time.time() - start_time:.2f}s, {failed} failed")
        return ordered
