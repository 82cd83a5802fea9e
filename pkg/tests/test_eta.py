from coalrates.eta import estimate_remaining_seconds, format_eta, progress_message


def test_eta_estimation_basic() -> None:
    remaining = estimate_remaining_seconds(elapsed_seconds=600.0, progress=0.5)

    assert remaining == 600
    assert format_eta(remaining) == "10m 0s"


def test_eta_none_when_no_progress() -> None:
    remaining = estimate_remaining_seconds(elapsed_seconds=600.0, progress=0.0)
    assert remaining is None
    assert format_eta(remaining) is None
    assert estimate_remaining_seconds(elapsed_seconds=-1.0, progress=0.5) is None


def test_format_eta_drops_seconds_past_an_hour() -> None:
    assert format_eta(3 * 3600 + 5 * 60 + 7) == "3h 5m"
    assert format_eta(42) == "42s"
    assert format_eta(0) == "0s"
    assert format_eta(-3) is None


def test_progress_message_reports_blocks_and_eta() -> None:
    assert progress_message(done=3, total=10, elapsed_seconds=30.0) == "3/10 blocks (30%), eta 1m 10s"
    assert progress_message(done=10, total=10, elapsed_seconds=30.0) == "10/10 blocks (100%)"
