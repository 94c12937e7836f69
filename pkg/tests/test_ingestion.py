import io
import threading

import numpy as np
import pytest
from PIL import Image

from hazardpipe.blobstore import BlobStore, MissingBlob
from hazardpipe.config import IngestionConfig
from hazardpipe.core import GeoPoint
from hazardpipe.imagemeta import (
    GPS_IFD_TAG,
    MalformedImage,
    ORIENTATION_TAG,
    anonymize,
    decode_pixels,
    extract_geotag,
)
from hazardpipe.ingestion import (
    IngestService,
    IngestStatus,
    RawSubmission,
    RejectReason,
    dedup_key,
    hamming,
)
from hazardpipe.persistence import Store


@pytest.fixture
def geotagged(fixtures_dir):
    return (fixtures_dir / "geotagged.jpg").read_bytes()


@pytest.fixture
def plain(fixtures_dir):
    return (fixtures_dir / "plain.jpg").read_bytes()


@pytest.fixture
def texty_png(fixtures_dir):
    return (fixtures_dir / "texty.png").read_bytes()


def jpeg_with_orientation(orientation):
    img = Image.new("RGB", (24, 24), (80, 120, 40))
    exif = Image.Exif()
    exif[ORIENTATION_TAG] = orientation
    exif[0x010F] = "SomeCam"
    buf = io.BytesIO()
    img.save(buf, format="JPEG", exif=exif)
    return buf.getvalue()


class TestExtractGeotag:
    def test_dms_conversion(self, geotagged):
        # 39 deg 34' 12" N = 39 + 34/60 + 12/3600 = 39.57
        point = extract_geotag(geotagged)
        assert point.lat == pytest.approx(39.57, abs=1e-9)
        assert point.lon == pytest.approx(2.65, abs=1e-9)

    def test_jpeg_without_gps(self, plain):
        assert extract_geotag(plain) is None

    def test_png_always_absent(self, texty_png):
        assert extract_geotag(texty_png) is None

    def test_truncated_jpeg(self, geotagged):
        with pytest.raises(MalformedImage):
            extract_geotag(geotagged[:40])

    def test_garbage_bytes(self):
        with pytest.raises(MalformedImage):
            extract_geotag(b"\x00" * 100)


class TestAnonymize:
    def test_strips_gps_and_maker(self, geotagged):
        clean = anonymize(geotagged)
        assert extract_geotag(clean) is None
        exif = Image.open(io.BytesIO(clean)).getexif()
        assert not dict(exif), "expected every EXIF tag gone for orientation=1"

    def test_preserves_nontrivial_orientation(self):
        data = jpeg_with_orientation(6)
        clean = anonymize(data)
        exif = Image.open(io.BytesIO(clean)).getexif()
        assert dict(exif) == {ORIENTATION_TAG: 6}

    def test_pixels_unchanged(self, geotagged, texty_png):
        for data in (geotagged, texty_png):
            assert np.array_equal(decode_pixels(data), decode_pixels(anonymize(data)))

    def test_png_textual_chunks_removed(self, texty_png):
        clean = anonymize(texty_png)
        info = Image.open(io.BytesIO(clean)).info
        assert "Comment" not in info and "Author" not in info
        assert b"taken near the shore" not in clean

    def test_already_clean_jpeg_unchanged(self, plain):
        assert anonymize(plain) == plain

    def test_idempotent(self, geotagged):
        once = anonymize(geotagged)
        assert anonymize(once) == once

    def test_geotag_of_anonymized_always_absent(self, geotagged, plain, texty_png):
        for data in (geotagged, plain, texty_png, jpeg_with_orientation(3)):
            assert extract_geotag(anonymize(data)) is None


class TestDedupKey:
    def test_deterministic(self, geotagged):
        assert dedup_key(geotagged) == dedup_key(geotagged)

    def test_reencoded_within_threshold(self, geotagged, fixtures_dir):
        reencoded = (fixtures_dir / "reencoded_q80.jpg").read_bytes()
        distance = hamming(dedup_key(geotagged), dedup_key(reencoded))
        assert distance <= 4

    def test_black_and_white_collide(self):
        def flat(color):
            buf = io.BytesIO()
            Image.new("L", (64, 64), color).save(buf, format="PNG")
            return buf.getvalue()

        assert hamming(dedup_key(flat(0)), dedup_key(flat(255))) == 0

    def test_distinct_photos_differ(self, geotagged, fixtures_dir):
        # The fixture photo versus its own vertical flip.
        img = Image.open(io.BytesIO(geotagged)).transpose(Image.FLIP_TOP_BOTTOM)
        buf = io.BytesIO()
        img.save(buf, format="JPEG")
        assert hamming(dedup_key(geotagged), dedup_key(buf.getvalue())) > 4


@pytest.fixture
def service(tmp_path):
    store = Store()
    blobs = BlobStore(tmp_path / "blobs")
    return IngestService(store, blobs, IngestionConfig(salt="test-salt"))


class TestIngest:
    def test_happy_path(self, service, geotagged):
        outcome = service.ingest(RawSubmission(geotagged, submitter_token="alice"))
        assert outcome.status == IngestStatus.ACCEPTED
        report = service.store.get_report(outcome.report_id)
        assert report.stage.value == "submitted"
        assert report.geo.lat == pytest.approx(39.57)
        # persisted blob is anonymized
        assert extract_geotag(service.blobs.get(report.image_ref)) is None

    def test_submitter_hash_not_token(self, service, geotagged):
        outcome = service.ingest(RawSubmission(geotagged, submitter_token="alice"))
        report = service.store.get_report(outcome.report_id)
        assert "alice" not in report.submitter
        other = IngestService(service.store, service.blobs, IngestionConfig(salt="other"))
        assert (
            other.ingest(RawSubmission(jpeg_with_orientation(3), "alice", GeoPoint(39.5, 2.6)))
            is not None
        )

    def test_duplicate_submission(self, service, geotagged):
        first = service.ingest(RawSubmission(geotagged, "alice"))
        second = service.ingest(RawSubmission(geotagged, "bob"))
        assert first.status == IngestStatus.ACCEPTED
        assert second.status == IngestStatus.DUPLICATE
        assert second.report_id is None
        assert len(service.store.all_reports()) == 1

    def test_reencoded_duplicate_detected(self, service, geotagged, fixtures_dir):
        service.ingest(RawSubmission(geotagged, "alice"))
        outcome = service.ingest(
            RawSubmission(
                (fixtures_dir / "reencoded_q80.jpg").read_bytes(),
                "bob",
                declared_geo=GeoPoint(39.57, 2.65),
            )
        )
        assert outcome.status == IngestStatus.DUPLICATE

    def test_png_without_geo_rejected(self, service, texty_png):
        outcome = service.ingest(RawSubmission(texty_png, "alice"))
        assert outcome.status == IngestStatus.REJECTED
        assert outcome.reject_reason == RejectReason.NO_GEOTAG

    def test_png_with_declared_geo_accepted(self, service, texty_png):
        outcome = service.ingest(
            RawSubmission(texty_png, "alice", declared_geo=GeoPoint(39.6, 2.7))
        )
        assert outcome.status == IngestStatus.ACCEPTED

    def test_exif_beats_declared_when_far_apart(self, service, geotagged):
        outcome = service.ingest(
            RawSubmission(geotagged, "alice", declared_geo=GeoPoint(41.0, 2.65))
        )
        assert outcome.status == IngestStatus.ACCEPTED
        report = service.store.get_report(outcome.report_id)
        assert report.geo.lat == pytest.approx(39.57)
        assert any(f.startswith("geo_disagreement") for f in outcome.quality_flags)
        assert service.store.flags_for(outcome.report_id) == list(outcome.quality_flags)

    def test_close_declared_geo_no_flag(self, service, geotagged):
        outcome = service.ingest(
            RawSubmission(geotagged, "alice", declared_geo=GeoPoint(39.571, 2.651))
        )
        assert outcome.quality_flags == ()

    def test_truncated_rejected(self, service, geotagged):
        outcome = service.ingest(RawSubmission(geotagged[:50], "alice"))
        assert outcome.reject_reason == RejectReason.MALFORMED

    def test_oversized_rejected(self, tmp_path, geotagged):
        service = IngestService(
            Store(),
            BlobStore(tmp_path / "b2"),
            IngestionConfig(max_payload_mb=0.001),
        )
        outcome = service.ingest(RawSubmission(geotagged, "alice"))
        assert outcome.reject_reason == RejectReason.TOO_LARGE

    def test_concurrent_same_image_single_accept(self, service, geotagged):
        outcomes = []
        lock = threading.Lock()

        def submit():
            result = service.ingest(RawSubmission(geotagged, "alice"))
            with lock:
                outcomes.append(result)

        threads = [threading.Thread(target=submit) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        accepted = [o for o in outcomes if o.status == IngestStatus.ACCEPTED]
        assert len(accepted) == 1
        assert len(service.store.all_reports()) == 1

    def test_no_persisted_blob_carries_gps(self, service, geotagged, texty_png):
        service.ingest(RawSubmission(geotagged, "a"))
        service.ingest(RawSubmission(texty_png, "b", declared_geo=GeoPoint(39.6, 2.7)))
        for ref in service.blobs.refs():
            assert extract_geotag(service.blobs.get(ref)) is None


class TestBlobStore:
    def test_content_addressing_layout(self, tmp_path):
        blobs = BlobStore(tmp_path / "blobs")
        ref = blobs.put(b"hello")
        assert (tmp_path / "blobs" / ref[:2] / ref).exists()
        assert blobs.get(ref) == b"hello"

    def test_missing_blob(self, tmp_path):
        blobs = BlobStore(tmp_path / "blobs")
        with pytest.raises(MissingBlob):
            blobs.get("00" * 32)
