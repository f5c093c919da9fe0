"""Synthetic COCO-style annotation files for tests."""

import json
import random


def synthetic_coco(n_images, seed=0, start_id=1000):
    """(captions_json, keypoints_json) dicts. Roughly 1 in 6 images has no usable person."""
    rng = random.Random(seed)
    images, caps, anns = [], [], []
    ann_id = 1
    cap_id = 1
    for i in range(n_images):
        image_id = start_id + 7 * i
        w, h = rng.choice([(640, 480), (480, 640), (500, 375), (427, 640)])
        images.append({"id": image_id, "file_name": f"COCO_val2014_{image_id:012d}.jpg", "width": w, "height": h})
        for c in range(rng.choice([5, 5, 5, 4])):
            caps.append({"id": cap_id, "image_id": image_id, "caption": f"A person doing activity {i} seen from view {c}."})
            cap_id += 1
        if i % 6 == 5:
            continue
        for _ in range(rng.randint(1, 3)):
            x, y = rng.uniform(-10, w * 0.6), rng.uniform(-10, h * 0.6)
            bw, bh = rng.uniform(5, w * 0.5), rng.uniform(5, h * 0.5)
            kps = []
            for _ in range(17):
                v = rng.choice([0, 1, 2, 2, 2])
                if v == 0:
                    kps += [0, 0, 0]
                else:
                    kps += [rng.randint(0, w), rng.randint(0, h), v]
            anns.append({
                "id": ann_id, "image_id": image_id, "category_id": 1, "iscrowd": 0,
                "bbox": [round(x, 2), round(y, 2), round(bw, 2), round(bh, 2)],
                "keypoints": kps, "num_keypoints": sum(1 for v in kps[2::3] if v > 0),
                "area": bw * bh,
            })
            ann_id += 1
    cats = [{"id": 1, "name": "person", "supercategory": "person"}]
    return (
        {"images": images, "annotations": caps},
        {"images": images, "annotations": anns, "categories": cats},
    )


def write_synthetic(tmp_path, n_images, seed=0):
    c, k = synthetic_coco(n_images, seed)
    cp, kp = tmp_path / "captions.json", tmp_path / "keypoints.json"
    cp.write_text(json.dumps(c))
    kp.write_text(json.dumps(k))
    return cp, kp


def synthetic_contexts(tmp_path, n_images, seed=0):
    from poseforge.coco_ingest import build_contexts, parse_caption_file, parse_keypoint_file

    cp, kp = write_synthetic(tmp_path, n_images, seed)
    return build_contexts(parse_caption_file(cp), parse_keypoint_file(kp))
