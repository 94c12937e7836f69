import json
import math
from datetime import datetime, timezone

import pytest
from hypothesis import given, strategies as st

from hazardpipe.core import (
    BoundingBox,
    Detection,
    GeoPoint,
    HazardClass,
    HazardPipeError,
    NotFinite,
    OutOfRange,
    PipelineStage,
    Report,
    make_geopoint,
)


class TestGeoPoint:
    def test_origin(self):
        assert make_geopoint(0.0, 0.0) == GeoPoint(0.0, 0.0)

    def test_mallorca_vicinity(self):
        point = make_geopoint(39.57, 2.65)
        assert point.lat == 39.57 and point.lon == 2.65

    def test_latitude_out_of_range(self):
        with pytest.raises(OutOfRange) as err:
            make_geopoint(91.0, 0.0)
        assert err.value.axis == "lat"

    @pytest.mark.parametrize("lat,lon", [(float("nan"), 0.0), (0.0, float("inf"))])
    def test_rejects_non_finite(self, lat, lon):
        with pytest.raises(NotFinite):
            make_geopoint(lat, lon)

    @pytest.mark.parametrize("lat,lon", [(0.0, 181.0), (-90.5, 0.0), (0.0, -180.01)])
    def test_bounds(self, lat, lon):
        with pytest.raises(OutOfRange):
            make_geopoint(lat, lon)


class TestBoundingBox:
    @given(
        x=st.floats(0, 1000),
        y=st.floats(0, 1000),
        w=st.floats(0.001, 500),
        h=st.floats(0.001, 500),
    )
    def test_constructible_box_has_positive_area(self, x, y, w, h):
        box = BoundingBox(x, y, x + w, y + h)
        assert box.area > 0

    @pytest.mark.parametrize(
        "coords",
        [
            (10, 0, 10, 5),  # zero width
            (0, 5, 5, 5),  # zero height
            (5, 0, 2, 5),  # inverted x
            (-1, 0, 5, 5),  # negative coordinate
        ],
    )
    def test_rejects_degenerate(self, coords):
        with pytest.raises((OutOfRange, NotFinite)):
            BoundingBox(*coords)

    def test_rejects_nan(self):
        with pytest.raises(NotFinite):
            BoundingBox(0, 0, math.nan, 5)


class TestHazardClass:
    def test_registry_is_closed_and_unique(self):
        labels = [c.value for c in HazardClass]
        assert len(labels) == len(set(labels))
        assert set(labels) == {
            "plastic_foil",
            "rubber_waste",
            "metal_can",
            "mixed_waste",
            "other",
        }


def _detection(det_id="d1", conf=0.8):
    return Detection(
        id=det_id,
        box=BoundingBox(0, 0, 10, 10),
        hazard_class=HazardClass.PLASTIC_FOIL,
        confidence=conf,
        uncertainty=1 - conf,
    )


def _report():
    t0 = datetime(2024, 6, 1, 12, 0, 0, 123000, tzinfo=timezone.utc)
    report = Report(
        id="r-0001",
        submitter="a" * 16,
        geo=GeoPoint(39.57, 2.65),
        captured_at=t0,
        image_ref="deadbeef",
        detections=(_detection(),),
    )
    return report.with_stage(PipelineStage.DETECTED, datetime(2024, 6, 1, 12, 0, 1, tzinfo=timezone.utc))


class TestDetection:
    @pytest.mark.parametrize("conf", [-0.1, 1.1])
    def test_confidence_bounds(self, conf):
        with pytest.raises(OutOfRange):
            _detection(conf=conf)

    def test_json_round_trip_uses_class_key(self):
        data = _detection().to_json_dict()
        assert data["class"] == "plastic_foil"
        assert Detection.from_json_dict(data) == _detection()


class TestReport:
    def test_stage_matches_history_tail(self):
        report = _report()
        assert report.stage == report.stage_history[-1][0] == PipelineStage.DETECTED

    def test_history_must_be_increasing(self):
        t = datetime(2024, 6, 1, tzinfo=timezone.utc)
        with pytest.raises(HazardPipeError):
            Report(
                id="r",
                submitter="s",
                geo=GeoPoint(0, 0),
                captured_at=t,
                image_ref="x",
                stage=PipelineStage.DETECTED,
                stage_history=(
                    (PipelineStage.SUBMITTED, t),
                    (PipelineStage.DETECTED, t),
                ),
            )

    def test_stage_history_tail_must_match_stage(self):
        t = datetime(2024, 6, 1, tzinfo=timezone.utc)
        with pytest.raises(HazardPipeError):
            Report(
                id="r",
                submitter="s",
                geo=GeoPoint(0, 0),
                captured_at=t,
                image_ref="x",
                stage=PipelineStage.DETECTED,
                stage_history=((PipelineStage.SUBMITTED, t),),
            )

    def test_json_round_trip_bit_identical(self):
        report = _report()
        payload = json.dumps(report.to_json_dict(), sort_keys=True)
        restored = Report.from_json_dict(json.loads(payload))
        assert restored == report
        assert json.dumps(restored.to_json_dict(), sort_keys=True) == payload

    def test_timestamps_truncated_to_milliseconds(self):
        t = datetime(2024, 6, 1, 12, 0, 0, 123456, tzinfo=timezone.utc)
        report = Report(
            id="r", submitter="s", geo=GeoPoint(0, 0), captured_at=t, image_ref="x"
        )
        assert report.captured_at.microsecond == 123000
