import { ExtractorSpec, exportedLayers } from './registry.js'

// Shape arithmetic for real dumps, kept separate from inference so the
// contracts are testable without loading any model.

export class TokenizationMismatch extends Error {}

export interface SpeechDumpPlan {
	layers: number
	frames: number
	dim: number
	/** frames the padded encoder emits before trimming (equals `frames` when unpadded) */
	rawFrames: number
}

export function frameCount(audioSamples: number, sampleRate: number, hopMs: number): number {
	if (audioSamples < 1) {
		throw new RangeError(`audio is empty (${audioSamples} samples)`)
	}
	const hop = sampleRate * hopMs / 1000
	return Math.ceil(audioSamples / hop)
}

/**
 * Expected output shape for one utterance.  Encoders running on fixed
 * padded windows emit frames for the padding too; those are trimmed so
 * T always reflects the real audio length.
 */
export function planSpeechDump(spec: ExtractorSpec, audioSamples: number): SpeechDumpPlan {
	const frames = frameCount(audioSamples, spec.sampleRate!, spec.hopMs!)
	const rawFrames = spec.paddedWindowSeconds
		? frameCount(spec.paddedWindowSeconds * spec.sampleRate!, spec.sampleRate!, spec.hopMs!)
		: frames
	if (rawFrames < frames) {
		throw new RangeError(
			`audio (${frames} frames) exceeds the encoder's ${spec.paddedWindowSeconds} s window`)
	}
	return { layers: exportedLayers(spec).length, frames, dim: spec.hiddenSize, rawFrames }
}

/**
 * Map tokenizer output rows back to manifest phonemes.  `specialMask`
 * flags rows that carry no phoneme (CLS/SEP/PAD and friends); what is
 * left must line up one-to-one with the manifest, anything else means
 * the model segmented the utterance differently than the alignment did.
 */
export function contentRows(specialMask: boolean[], phonemeCount: number): number[] {
	const rows: number[] = []
	for (let i = 0; i < specialMask.length; i++) {
		if (!specialMask[i]) {
			rows.push(i)
		}
	}
	if (phonemeCount < 1) {
		throw new TokenizationMismatch('utterance has no phonemes')
	}
	if (rows.length !== phonemeCount) {
		throw new TokenizationMismatch(
			`model produced ${rows.length} phoneme tokens for ${phonemeCount} manifest phonemes`)
	}
	return rows
}
