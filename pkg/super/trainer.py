# super/trainer.py
import json
import os
import random
from abc import ABC
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader

from base.clips import Manifest
from base.outputs import PredictionRecord
from base.prototypes import PrototypeBank
from base.run_config import RunConfig
from nets.losses import (LossBreakdown, abstention_loss, cluster_sep_losses, head_norm_loss,
                         orthogonality_loss, total_loss, transformation_loss)
from nets.protoasnet import ProtoASNet
from nets.transforms import warp
from super.calculator import Calculator, DefaultCalculator
from super.pusher import DefaultPusher, Pusher
from utils.manifestmanager import ClipDataset, ManifestManager, transforms_from_params
from utils.seeding import derive_seed, seed_everything
from utils.logging_setup import logger

LOG_NAME = "train_log.jsonl"


def push_schedule(epochs: int, period: int) -> List[int]:
    """Epochs after which a push happens; the last epoch always carries the terminal push"""
    pushes = list(range(period, epochs + 1, period))
    if not pushes or pushes[-1] != epochs:
        pushes.append(epochs)
    return pushes


def save_checkpoint(path: str, model: ProtoASNet, config: RunConfig, epoch: int,
                    optimizer: Optional[torch.optim.Optimizer] = None, extra: Optional[Dict[str, Any]] = None) -> str:
    """Write to a temp file and atomically replace; the previous file survives a failed write"""
    payload = {
        "model_state": model.state_dict(),
        "bank": model.bank.to_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "rng_states": {"torch": torch.get_rng_state(), "numpy": np.random.get_state(), "python": random.getstate()},
        "extra": extra or {},
    }
    tmp_path = path + ".tmp"
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        torch.save(payload, tmp_path)
        os.replace(tmp_path, path)
    except OSError as e:
        logger.error(f"Failed to write checkpoint '{path}': {e}")
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise RuntimeError(f"Failed to write checkpoint '{path}': {e}")
    logger.debug(f"Saved checkpoint '{path}' (epoch {epoch})")
    return path


def load_checkpoint(path: str, map_location: str = "cpu",
                    restore_rng: bool = False) -> Tuple[ProtoASNet, RunConfig, Dict[str, Any]]:
    """Rebuild the model, its config and the raw payload from a checkpoint file"""
    if not os.path.exists(path):
        logger.error(f"Checkpoint '{path}' not found")
        raise FileNotFoundError(f"Checkpoint '{path}' not found!")
    # local, self-written files: the payload carries numpy RNG state
    payload = torch.load(path, map_location=map_location, weights_only=False)
    config = RunConfig.from_dict(payload["config"])
    model = ProtoASNet.from_config(config)
    model.load_state_dict(payload["model_state"])
    model.prototypes.bank = PrototypeBank.from_dict(payload["bank"])
    if restore_rng:
        torch.set_rng_state(payload["rng_states"]["torch"])
        np.random.set_state(payload["rng_states"]["numpy"])
        random.setstate(payload["rng_states"]["python"])
    model.eval()
    logger.info(f"Loaded checkpoint '{path}' (epoch {payload['epoch']}, hash {payload['config_hash'][:12]})")
    return model, config, payload


class Trainer(ABC):
    """Super-class for end-to-end optimization with periodic push"""
    def __init__(self, manipulator: Optional['Manipulator'] = None, calculator: Optional[Calculator] = None,
                 pusher: Optional[Pusher] = None):
        self._manipulator = manipulator
        self._calculator = calculator if calculator else DefaultCalculator(manipulator)
        self._pusher = pusher if pusher else DefaultPusher(manipulator)
        logger.info("Initialized Trainer")

    # single batch

    def compute_losses(self, model: ProtoASNet, batch, config: RunConfig) -> Tuple[torch.Tensor, LossBreakdown]:
        """Forward an (augmented) batch and evaluate every weighted loss term"""
        x, labels, _, params, frame_index = batch
        param = next(model.parameters())
        x = model.select_frames(x.to(param.device, param.dtype), frame_index)
        labels = labels.to(param.device)
        transforms = transforms_from_params(params)
        augmented = warp(x, transforms).clamp(0.0, 1.0)
        weights = config.loss.weights()
        clean_occurrence = None
        if weights["trns"] > 0 and not all(t.is_identity() for t in transforms):
            # one encoder pass per step, so BatchNorm running statistics update once
            features, occurrence = model.encoder(torch.cat([augmented, x]))
            n = x.shape[0]
            out = model.from_maps(features[:n], occurrence[:n])
            clean_occurrence = occurrence[n:]
        else:
            out = model(augmented)

        if model.has_uncertainty:
            l_abs = abstention_loss(out.class_probs, out.alpha, labels, config.loss.lambda_abs, model.diagnostics)
        else:
            l_abs = abstention_loss(out.class_probs, torch.zeros_like(out.alpha), labels, 0.0)
        l_clst, l_sep = cluster_sep_losses(out.similarities, labels, model.prototypes.class_mask)
        l_orth = orthogonality_loss(model.prototypes.prototype_vectors, model.diagnostics)
        if clean_occurrence is not None:
            l_trns = transformation_loss(model, x, transforms, occurrence=clean_occurrence,
                                         warped_occurrence=out.occurrence)
        else:
            l_trns = x.new_zeros(())
        l_norm = head_norm_loss(model.prototypes.head.weight, model.prototypes.head_identity)
        terms = {"abs": l_abs, "clst": l_clst, "sep": l_sep, "orth": l_orth, "trns": l_trns, "norm": l_norm}
        return total_loss(terms, weights)

    # evaluation

    def predict(self, model: ProtoASNet, manager: ManifestManager, manifest: Manifest,
                batch_size: int = 8) -> List[PredictionRecord]:
        """Clip-level predictions with contributions toward the predicted class; no parameter mutation"""
        dataset = ClipDataset(manager, manifest, augment=False, image_mode=model.input_mode == "image")
        loader = DataLoader(dataset, batch_size=batch_size, shuffle=False, num_workers=0)
        param = next(model.parameters())
        records = []
        was_training = model.training
        model.eval()
        with torch.no_grad():
            for x, _, indices, _, frame_index in loader:
                out = model(model.select_frames(x.to(param.device, param.dtype), frame_index))
                contributions = model.prototypes.contributions(out.similarities)
                for row, index in enumerate(indices.tolist()):
                    entry = dataset.entries[index]
                    joint = out.joint_probs[row].cpu().numpy()
                    predicted = int(np.argmax(joint[:-1]))
                    records.append(PredictionRecord(
                        clip_id=entry.clip_id, cine_id=entry.cine_id, study_id=entry.study_id, label=entry.label,
                        joint_probs=joint, alpha=float(out.alpha[row]), ambiguous=entry.ambiguous,
                        class_probs=out.class_probs[row].cpu().numpy(),
                        contributions=contributions[row, predicted].cpu().numpy()))
        model.train(was_training)
        return records

    def evaluate_epoch(self, model: ProtoASNet, config: RunConfig, manifest: Manifest,
                       split: str = "val", manager: Optional[ManifestManager] = None) -> Dict[str, Any]:
        """Clip, cine and study metrics on one split"""
        manager = manager or ManifestManager.from_config(config)
        records = self.predict(model, manager, manifest, config.eval.batch_size)
        return self._calculator.execute(records, {
            "type": "metrics",
            "split": split,
            "classes": list(range(config.num_classes)),
            "alpha_threshold": config.eval.alpha_threshold,
            "uncertainty_score": "alpha" if model.has_uncertainty else "entropy",
            "num_prototypes": model.bank.size,
            "sparsity_coverage": config.eval.sparsity_coverage,
            "diversity_top_k": config.eval.diversity_top_k,
            "output_normalization": config.model.output_normalization,
            "config_hash": config.config_hash(),
            "model_diagnostics": model.diagnostics.to_dict(),
        })

    # training

    def train(self, config: RunConfig, manifest: Manifest, run_name: str = "default") -> Dict[str, Any]:
        """Mini-batch Adam on the total loss with pushes, best-by-val-F1 selection and a terminal push"""
        tc = config.train
        seed_everything(tc.seed, tc.deterministic)
        run_dir = os.path.join(tc.runs_root, run_name)
        os.makedirs(run_dir, exist_ok=True)
        log_path = os.path.join(run_dir, LOG_NAME)
        open(log_path, "w", encoding="utf-8").close()
        config.save(os.path.join(run_dir, "config.json"))

        if not tc.augment and config.loss.lambda_trns > 0:
            logger.warning(f"train.augment is off: the transformation term (lambda_trns={config.loss.lambda_trns}) "
                           f"is 0 for the whole run")
        manager = ManifestManager.from_config(config)
        image_mode = config.model.input_mode == "image"
        train_split, val_split = manifest.get_split("train"), manifest.get_split("val")
        train_set = ClipDataset(manager, train_split, augment=tc.augment, seed=tc.seed, image_mode=image_mode)
        push_set = ClipDataset(manager, train_split, augment=False, image_mode=image_mode)
        generator = torch.Generator().manual_seed(derive_seed(tc.seed, "loader"))
        loader = DataLoader(train_set, batch_size=tc.batch_size, shuffle=True, generator=generator,
                            num_workers=tc.num_workers)

        model = ProtoASNet.from_config(config)
        optimizer = torch.optim.Adam(model.parameters(), lr=tc.learning_rate)
        self._pusher.batch_size = tc.push_batch_size
        pushes = push_schedule(tc.epochs, tc.push_period) if tc.push_enabled else []
        history, best_f1, best_epoch = [], float("-inf"), None
        best_path = os.path.join(run_dir, "best.pt")
        logger.info(f"Training '{run_name}': {len(train_set)} train clips, {tc.epochs} epochs, pushes at {pushes}")

        for epoch in range(1, tc.epochs + 1):
            train_set.set_epoch(epoch)
            model.train()
            sums: Dict[str, float] = {}
            steps = 0
            for step, batch in enumerate(loader):
                loss, breakdown = self.compute_losses(model, batch, config)
                if not torch.isfinite(loss):
                    batch_id = f"epoch {epoch} batch {step}"
                    logger.error(f"Non-finite loss at {batch_id}: {breakdown.to_dict()}")
                    raise RuntimeError(f"Non-finite loss at {batch_id}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                for key, value in breakdown.to_dict().items():
                    sums[key] = sums.get(key, 0.0) + value
                steps += 1
            epoch_loss = {key: value / steps for key, value in sums.items()}
            history.append(epoch_loss)
            self._append_log(log_path, {"epoch": epoch, "split": "train", "steps": steps, "loss": epoch_loss})
            logger.info(f"Epoch {epoch}/{tc.epochs}: total loss {epoch_loss['total']:.5f} over {steps} steps")

            if epoch in pushes and epoch != tc.epochs:
                self._push(model, push_set, epoch, run_dir, log_path)

            metrics = self.evaluate_epoch(model, config, val_split, "val", manager) if len(val_split) else None
            val_f1 = metrics["clip"]["macro_f1"] if metrics else -epoch_loss["total"]
            self._append_log(log_path, {"epoch": epoch, "split": "val", "metrics": metrics})
            save_checkpoint(os.path.join(run_dir, f"ckpt_{epoch:03d}.pt"), model, config, epoch, optimizer)
            if val_f1 > best_f1:
                best_f1, best_epoch = val_f1, epoch
                save_checkpoint(best_path, model, config, epoch, optimizer, {"val_macro_f1": val_f1})
                logger.info(f"New best checkpoint at epoch {epoch} (val macro-F1 {val_f1:.4f})")

        if tc.restore_best and best_epoch is not None and best_epoch != tc.epochs:
            best_model, _, _ = load_checkpoint(best_path)
            model.load_state_dict(best_model.state_dict())
            model.prototypes.bank = best_model.bank
            logger.info(f"Restored best weights from epoch {best_epoch}")
        if tc.push_enabled:
            self._push(model, push_set, tc.epochs, run_dir, log_path)
        final_path = save_checkpoint(os.path.join(run_dir, "final.pt"), model, config, tc.epochs, optimizer,
                                     {"best_epoch": best_epoch, "val_macro_f1": best_f1})
        return {"run_dir": run_dir, "final_checkpoint": final_path, "best_checkpoint": best_path,
                "best_epoch": best_epoch, "best_val_macro_f1": best_f1, "log": log_path, "history": history,
                "model": model}

    def _push(self, model: ProtoASNet, push_set: ClipDataset, epoch: int, run_dir: str, log_path: str) -> None:
        report = self._pusher.push_prototypes(model, push_set, epoch)
        self._pusher.save_report(report, os.path.join(run_dir, f"push_{epoch:03d}.json"))
        self._append_log(log_path, {"epoch": epoch, "event": "push", "total_distance": report.total_distance()})

    @staticmethod
    def _append_log(path: str, record: Dict[str, Any]) -> None:
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def __repr__(self) -> str:
        return "Trainer()"


class DefaultTrainer(Trainer):
    """Default implementation of Trainer"""
    def __init__(self, manipulator: Optional['Manipulator'] = None, calculator: Optional[Calculator] = None,
                 pusher: Optional[Pusher] = None):
        super().__init__(manipulator, calculator, pusher)
        logger.info("Initialized DefaultTrainer")
