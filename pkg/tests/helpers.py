"""Small builders shared by the test modules."""

from __future__ import annotations

from fairaug.manifest import Diagnosis, Sex, Split, SubjectRecord

HEADER = "subject_id,sex,age,bmi,diagnosis,image_path,mask_path,ed_frame,es_frame,n_slices,n_frames"


def rec(sid="s0", sex="F", age=55, bmi=27.0, dx="healthy", ed=1, es=5, n_slices=5, n_frames=20,
        split=None, image_path=None, mask_path=None) -> SubjectRecord:
    return SubjectRecord(
        subject_id=sid, sex=Sex(sex), age=age, bmi=bmi, diagnosis=Diagnosis(dx),
        image_path=image_path or f"volumes/{sid}", mask_path=mask_path or f"masks/{sid}",
        ed_frame=ed, es_frame=es, n_slices=n_slices, n_frames=n_frames,
        split=Split(split) if split else None,
    )


def csv_row(sid="s0", sex="F", age="55", bmi="27.0", dx="healthy", ed="1", es="5", n_slices="5", n_frames="20"):
    return f"{sid},{sex},{age},{bmi},{dx},volumes/{sid},masks/{sid},{ed},{es},{n_slices},{n_frames}"
