from dentlab.harness.scenario import (
    MIX_RATIOS,
    ONE_OF_16,
    DegenerateScenarioException,
    EvalReport,
    InvalidScenarioException,
    SampleRecord,
    Scenario,
    ScenarioKind,
    SigmaPoint,
)
from dentlab.harness.profiling import ProfileRow, analytic_flops, profile
from dentlab.harness.interleave import (
    EvaluationMode,
    run_deny_updates,
    run_interleaved,
    run_mixed_batch,
    run_replayed,
    run_static,
)
from dentlab.harness.sweep import SweepAxis, run_sweep
from dentlab.harness.reporting import (
    ReportFormatException,
    RunResults,
    read_report_json,
    write_results,
    write_tables,
)
from dentlab.harness.runner import ScenarioResult, run_scenario, run_scenarios
