"""
Latent training on a synthetic set
==================================

Train a STIL detector for one action of the easy synthetic benchmark and
look at how well the selected subtubes cover the planted actors.
"""
import numpy as np

from stil.evaluation import st_iou
from stil.synthetic import benchmark_spec, generate_videos
from stil.trainer import TrainConfig, TrainTrace, assignment_tube, train_stil

spec = benchmark_spec("easy-small")
videos, gts = generate_videos(spec)
gt = {g.video_id: g.as_tube() for g in gts}
action = spec.actions[0]

trace = TrainTrace()
model = train_stil(videos, action, TrainConfig(epochs=5), trace=trace)
print(f"{action}: |w| = {np.linalg.norm(model.weights):.3f}, b = {model.bias:.3f}")

# overlap of the chosen subtubes with the actor, epoch by epoch
for epoch, chosen in enumerate(trace.assignments):
    ious = [st_iou(assignment_tube(trace.videos[vid], a), gt[vid]) for vid, a in chosen.items()]
    print(f"epoch {epoch}: mean st-IoU {np.mean(ious):.3f} over {len(ious)} positive videos")
