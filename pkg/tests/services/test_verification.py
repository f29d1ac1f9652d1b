import numpy as np
import pytest

from app.services import verification
from app.services.verification import VerificationReport, dct2_oracle


def _names(report: VerificationReport) -> set[str]:
    return {c.name for c in report.checks}


def test_dct2_oracle_of_a_constant_keeps_only_dc():
    out = dct2_oracle(np.full((4, 4), 2.0))
    assert out[0, 0] == pytest.approx(8.0)
    out[0, 0] = 0.0
    assert np.abs(out).max() < 1e-12


def test_spectral_suite_passes():
    report = VerificationReport()
    verification.run_spectral_suite(report, seed=0, shapes=20)
    assert report.passed, report.to_table()
    assert {'round_trip', 'isometry', 'oracle_2x2_4x4', 'hco_semigroup'} <= _names(report)


def test_scaled_dct_breaks_isometry():
    report = VerificationReport()
    verification.run_spectral_suite(report, seed=0, dct_scale=1.01, shapes=20)
    assert not report.passed
    assert 'isometry' in {c.name for c in report.failures}


def test_fusion_suite_passes():
    report = VerificationReport()
    verification.run_fusion_suite(report, seed=0)
    assert report.passed, report.to_table()
    assert 'gumbel_frequencies' in _names(report)


def test_ingest_suite_passes():
    report = VerificationReport()
    verification.run_ingest_suite(report, seed=0, streams=100)
    assert report.passed, report.to_table()


def test_crashing_check_is_recorded_as_failure():
    report = VerificationReport()

    def boom() -> float:
        raise RuntimeError('no')

    result = verification._Recorder('demo', report).check('boom', boom, 1.0)
    assert not result.passed
    assert 'RuntimeError' in result.detail
    assert report.failures == [result]


def test_report_table_summarises():
    report = verification.verify('fusion')
    table = report.to_table()
    assert table.endswith(f'{len(report.checks)}/{len(report.checks)} checks passed')
    assert list(report.to_frame().columns) == ['suite', 'check', 'status', 'value', 'threshold', 'seconds']


@pytest.mark.slow
def test_grad_suite_passes():
    report = VerificationReport()
    verification.run_grad_suite(report, seed=0, coords_per_param=1)
    assert report.passed, report.to_table()
    assert 'pipeline.mini' in _names(report)
    thresholds = {c.name: c.threshold for c in report.checks}
    assert thresholds['op.hco'] == verification.GRAD_TOL == 1e-4
    assert thresholds['op_f32.hco'] == verification.GRAD_TOL_F32 == 1e-2
    assert thresholds['pipeline.mini'] == verification.PIPELINE_GRAD_TOL


@pytest.mark.parametrize('dtype', [verification.DType.F64, verification.DType.F32])
def test_op_cases_follow_requested_precision(dtype):
    cases = verification._op_cases(np.random.default_rng(0), dtype)
    for forward, probes in cases.values():
        assert all(p.dtype == dtype for p in probes)
        assert forward().dtype == dtype


def test_single_precision_ops_pass_at_looser_tolerance():
    rng = np.random.default_rng(1)
    forward, probes = verification._op_cases(rng, verification.DType.F32)['layernorm']
    weights = rng.standard_normal(forward().shape)
    errors = [
        verification.fd_check(lambda: verification._weighted_sum(forward(), weights), p, h=verification.FD_STEP_F32)
        for p in probes
    ]
    assert max(errors) < verification.GRAD_TOL_F32
