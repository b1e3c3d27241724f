import json

import pytest

from refexpgen.geometry import BBox, GeometryError, Instance, Role
from refexpgen.ingest import (
    RoleTaxonomy,
    SchemaError,
    classify_role,
    default_taxonomy,
    filter_by_confidence,
    make_crop_spec,
    parse_detections,
)


def make_doc(detections, image_id="img1", width=100, height=100):
    return json.dumps(
        [
            {
                "image_id": image_id,
                "image_path": f"images/{image_id}.jpg",
                "width": width,
                "height": height,
                "detections": detections,
            }
        ]
    )


def det(bbox, category="car", confidence=0.9):
    return {"bbox": bbox, "category": category, "confidence": confidence}


class TestParseDetections:
    def test_counts_and_ids(self):
        doc = make_doc([det([0, 0, 10, 10]), det([5, 5, 20, 20]), det([1, 1, 2, 2])])
        records = parse_detections(doc)
        assert len(records) == 1
        rec = records[0]
        assert len(rec.detections) == 3
        ids = [inst.instance_id for inst in rec.instances()]
        assert ids == ["img1#0", "img1#1", "img1#2"]

    def test_empty_detections_is_fine(self):
        records = parse_detections(make_doc([]))
        assert records[0].detections == ()
        assert records[0].instances() == []

    def test_accepts_bytes_and_file_objects(self, tmp_path):
        doc = make_doc([det([0, 0, 10, 10])])
        assert parse_detections(doc.encode("utf-8"))[0].image_id == "img1"
        p = tmp_path / "d.json"
        p.write_text(doc)
        with open(p, "rb") as fh:
            assert parse_detections(fh)[0].image_id == "img1"

    def test_inverted_box_names_index(self):
        doc = make_doc([det([0, 0, 10, 10]), det([30, 0, 10, 10])])
        with pytest.raises(GeometryError) as excinfo:
            parse_detections(doc)
        assert "detections[1]" in str(excinfo.value)

    def test_out_of_bounds_box(self):
        doc = make_doc([det([0, 0, 150, 10])], width=100, height=100)
        with pytest.raises(GeometryError) as excinfo:
            parse_detections(doc)
        assert "exceeds image bounds" in str(excinfo.value)

    def test_missing_field_names_path(self):
        doc = json.dumps([{"image_id": "x", "image_path": "x.jpg", "width": 10, "height": 10}])
        with pytest.raises(SchemaError) as excinfo:
            parse_detections(doc)
        assert excinfo.value.path == "[0].detections"

    def test_wrong_type_names_path(self):
        doc = json.dumps(
            [{"image_id": "x", "image_path": "x.jpg", "width": "ten", "height": 10,
              "detections": []}]
        )
        with pytest.raises(SchemaError) as excinfo:
            parse_detections(doc)
        assert excinfo.value.path == "[0].width"

    def test_bad_confidence(self):
        doc = make_doc([det([0, 0, 1, 1], confidence=1.2)])
        with pytest.raises(SchemaError) as excinfo:
            parse_detections(doc)
        assert "confidence" in excinfo.value.path

    def test_not_json(self):
        with pytest.raises(SchemaError):
            parse_detections(b"nope{")

    def test_duplicate_image_ids_rejected(self):
        entry = json.loads(make_doc([det([0, 0, 10, 10])]))[0]
        with pytest.raises(SchemaError) as excinfo:
            parse_detections(json.dumps([entry, entry]))
        assert "duplicate image_id" in str(excinfo.value)


def inst(confidence, i=0):
    return Instance(f"img1#{i}", "img1", BBox(0, 0, 10, 10), "car", confidence)


class TestFilterByConfidence:
    def test_strictly_greater(self):
        xs = [inst(0.9, 0), inst(0.5, 1), inst(0.51, 2)]
        kept = filter_by_confidence(xs, 0.5)
        assert [x.confidence for x in kept] == [0.9, 0.51]

    def test_zero_threshold_keeps_positive(self):
        xs = [inst(0.1, 0), inst(0.9, 1)]
        assert filter_by_confidence(xs, 0.0) == xs

    def test_threshold_one_drops_all(self):
        assert filter_by_confidence([inst(1.0)], 1.0) == []

    def test_subset_and_idempotent(self):
        xs = [inst(c / 10, i) for i, c in enumerate(range(0, 10))]
        once = filter_by_confidence(xs, 0.45)
        assert all(x in xs for x in once)
        assert filter_by_confidence(once, 0.45) == once

    def test_threshold_out_of_range(self):
        with pytest.raises(ValueError):
            filter_by_confidence([], 1.5)


class TestClassifyRole:
    def test_person_is_subject(self):
        assert classify_role("person", default_taxonomy()) is Role.SUBJECT

    def test_normalization(self):
        assert classify_role("Food ", default_taxonomy()) is Role.OBJECT
        assert classify_role("  HUMAN", default_taxonomy()) is Role.SUBJECT

    def test_unknown_fallback(self):
        assert classify_role("unicycle", default_taxonomy()) is Role.UNKNOWN

    def test_image_is_exactly_three_roles(self):
        tax = default_taxonomy()
        seen = {classify_role(c, tax) for c in ["person", "food", "unicycle", "tool", "robot"]}
        assert seen <= {Role.SUBJECT, Role.OBJECT, Role.UNKNOWN}

    def test_from_file(self, tmp_path):
        p = tmp_path / "tax.json"
        p.write_text(json.dumps({"subject": ["Dragon"], "object": ["Sword"]}))
        tax = RoleTaxonomy.from_file(str(p))
        assert classify_role("dragon", tax) is Role.SUBJECT
        assert classify_role("sword", tax) is Role.OBJECT
        assert classify_role("person", tax) is Role.UNKNOWN


class TestMakeCropSpec:
    def _record(self):
        return parse_detections(make_doc([det([10, 10, 20, 20])]))[0]

    def test_zero_padding_is_identity(self):
        rec = self._record()
        [instx] = rec.instances()
        spec = make_crop_spec(instx, rec, padding=0)
        assert spec.bbox == instx.bbox

    def test_padding_clamped_at_origin(self):
        rec = parse_detections(make_doc([det([0, 0, 20, 20])]))[0]
        [instx] = rec.instances()
        spec = make_crop_spec(instx, rec, padding=5)
        assert spec.bbox.as_list() == [0, 0, 25, 25]

    def test_padding_clamped_at_far_edge(self):
        rec = parse_detections(make_doc([det([90, 90, 100, 100])]))[0]
        [instx] = rec.instances()
        spec = make_crop_spec(instx, rec, padding=5)
        assert spec.bbox.as_list() == [85, 85, 100, 100]

    def test_any_padding_stays_in_bounds(self):
        rec = self._record()
        [instx] = rec.instances()
        for padding in (0, 1, 7.5, 50, 1000):
            spec = make_crop_spec(instx, rec, padding=padding)
            b = spec.bbox
            assert 0 <= b.x_min <= b.x_max <= rec.image_width
            assert 0 <= b.y_min <= b.y_max <= rec.image_height

    def test_wrong_image_rejected(self):
        rec = self._record()
        other = Instance("other#0", "other", BBox(0, 0, 1, 1), "car", 0.9)
        with pytest.raises(ValueError):
            make_crop_spec(other, rec)
