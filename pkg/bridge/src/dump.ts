import { existsSync, mkdirSync, readFileSync, writeFileSync } from 'node:fs'
import { basename, dirname, isAbsolute, join, relative, resolve } from 'node:path'

import { AxisKind, FeatureStack, writePfe } from './pfe.js'
import { ManifestError, ManifestRecord, parseManifest, totalDuration } from './manifest.js'
import { ExtractorKind, ExtractorSpec, exportedLayers, lookupModel } from './registry.js'
import { contentRows, planSpeechDump } from './plan.js'
import { readWav, resampleLinear } from './audio.js'
import { fillUniform, streamSeed } from './rng.js'

export class ModelLoadError extends Error {}

export interface DumpFailure {
	id: string
	error: string
}

export interface DumpReport {
	/** feature files written, in manifest order */
	written: string[]
	failures: DumpFailure[]
	manifestCopy: string
	metaPath: string
}

interface MetaEntry {
	model: string
	kind: ExtractorKind
	hop_ms: number | null
	layers: number[]
	dim: number
	tap_point: string | null
	seed: number | null
}

// meta.json is part of the interchange contract: whoever consumes the
// dump learns the hop and the layer list from here, not from the model.
// It maps stream name to the dump that produced it, so several streams
// can share one output directory.
function writeMeta(outDir: string, stream: string, entry: MetaEntry): string {
	const path = join(outDir, 'meta.json')
	let all: Record<string, MetaEntry> = {}
	if (existsSync(path)) {
		try {
			all = JSON.parse(readFileSync(path, 'utf-8'))
		} catch {
			all = {}
		}
	}
	all[stream] = entry
	const sorted = Object.fromEntries(Object.keys(all).sort().map(k => [k, all[k]!]))
	writeFileSync(path, JSON.stringify(sorted, null, 2) + '\n')
	return path
}

function featureRelPath(id: string, stream: string): string {
	return join('features', `${id}.${stream}.pfe`)
}

// the copy's refs must resolve against ITS directory, so refs carried
// over from the source manifest get rebased
function rebaseRef(ref: string, manifestDir: string, outDir: string): string {
	return isAbsolute(ref) ? ref : relative(outDir, resolve(manifestDir, ref))
}

function writeManifestCopy(
	records: ManifestRecord[], written: Set<string>, stream: string,
	manifestPath: string, outDir: string): string {
	const copyPath = join(outDir, basename(manifestPath))
	const manifestDir = dirname(resolve(manifestPath))

	// streams dumped into this directory earlier stay referenced, so a
	// speech dump and a linguistic dump can accumulate in one place
	const prior = new Map<string, Record<string, string>>()
	if (existsSync(copyPath) && resolve(copyPath) !== resolve(manifestPath)) {
		for (const record of parseManifest(copyPath)) {
			prior.set(record.id, (record.raw['features'] as Record<string, string> | undefined) ?? {})
		}
	}

	const lines: string[] = []
	for (const record of records) {
		const carried = (record.raw['features'] as Record<string, string> | undefined) ?? {}
		const features: Record<string, string> = {}
		for (const [name, ref] of Object.entries(carried)) {
			features[name] = rebaseRef(ref, manifestDir, outDir)
		}
		Object.assign(features, prior.get(record.id) ?? {})
		if (written.has(record.id)) {
			features[stream] = featureRelPath(record.id, stream)
		}
		const row: Record<string, unknown> = { ...record.raw }
		if (Object.keys(features).length > 0) {
			row['features'] = features
		} else {
			delete row['features']
		}
		lines.push(JSON.stringify(row))
	}
	writeFileSync(copyPath, lines.join('\n') + '\n')
	return copyPath
}

export interface StubOptions {
	manifestPath: string
	outDir: string
	kind: ExtractorKind
	seed: number
	layers: number
	dim: number
	stream?: string
}

/**
 * Seeded fake dump with the real shapes: speech stacks get one frame per
 * duration unit (T = summed durations), linguistic stacks one row per
 * phoneme.  Payloads depend only on (seed, stream, utterance id), so a
 * rerun is byte-identical and pipelines can cache on content.
 */
export function stubDump(options: StubOptions): DumpReport {
	const { manifestPath, outDir, kind, seed } = options
	if (!Number.isInteger(seed) || seed < 0) {
		throw new RangeError(`seed must be a non-negative integer, got ${seed}`)
	}
	if (!Number.isInteger(options.layers) || options.layers < 1) {
		throw new RangeError(`layers must be >= 1, got ${options.layers}`)
	}
	if (!Number.isInteger(options.dim) || options.dim < 1) {
		throw new RangeError(`dim must be >= 1, got ${options.dim}`)
	}
	const stream = options.stream ?? (kind === 'speech' ? 'speech' : 'ling')
	const records = parseManifest(manifestPath)

	for (const record of records) {
		if (kind === 'speech' && totalDuration(record) < 1) {
			throw new ManifestError(null,
				`utterance '${record.id}' has zero total duration, cannot stub a speech stack`)
		}
	}

	mkdirSync(outDir, { recursive: true })
	const written: string[] = []
	for (const record of records) {
		const length = kind === 'speech' ? totalDuration(record) : record.phonemes.length
		const stack: FeatureStack = {
			layers: options.layers,
			length,
			dim: options.dim,
			axisKind: kind === 'speech' ? AxisKind.Frame : AxisKind.Phoneme,
			data: fillUniform(streamSeed(seed, stream, record.id), options.layers * length * options.dim),
		}
		const rel = featureRelPath(record.id, stream)
		writePfe(join(outDir, rel), stack)
		written.push(rel)
	}

	const manifestCopy = writeManifestCopy(records, new Set(records.map(r => r.id)), stream, manifestPath, outDir)
	const metaPath = writeMeta(outDir, stream, {
		model: 'stub',
		kind,
		hop_ms: null,
		layers: Array.from({ length: options.layers }, (_, i) => i),
		dim: options.dim,
		tap_point: null,
		seed,
	})
	return { written, failures: [], manifestCopy, metaPath }
}

export interface HiddenStates {
	/** layer-major, layers x rows x dim */
	layers: number
	rows: number
	dim: number
	data: Float32Array
}

export interface SpeechExtractor {
	infer(samples: Float32Array): Promise<HiddenStates>
}

export interface LinguisticExtractor {
	encode(phonemes: string[]): Promise<{ states: HiddenStates; specialMask: boolean[] }>
}

// Inference runs through onnxruntime-node against a locally exported
// encoder.  The runtime is loaded lazily so stub mode works without it.
async function loadOnnxSession(spec: ExtractorSpec, modelPath: string | undefined) {
	if (!modelPath) {
		throw new ModelLoadError(
			`model '${spec.model}' needs --model-path pointing at a local ONNX export`)
	}
	const encoderPath = resolve(modelPath, 'encoder.onnx')
	if (!existsSync(encoderPath)) {
		throw new ModelLoadError(`no encoder.onnx under ${modelPath}`)
	}
	let ort
	try {
		ort = await import('onnxruntime-node')
	} catch {
		throw new ModelLoadError(
			"onnxruntime-node is not installed; 'npm install onnxruntime-node' to run real dumps")
	}
	try {
		// single-threaded CPU execution keeps repeated dumps bit-identical
		return await ort.default.InferenceSession.create(encoderPath, {
			executionProviders: ['cpu'],
			intraOpNumThreads: 1,
			interOpNumThreads: 1,
		})
	} catch (err) {
		throw new ModelLoadError(`failed to load ${encoderPath}: ${(err as Error).message}`)
	}
}

interface OutputTensor {
	dims: readonly number[]
	data: Float32Array
}

function statesFromOutput(tensor: OutputTensor): HiddenStates {
	const [layers, rows, dim] = tensor.dims
	if (tensor.dims.length !== 3 || !layers || !rows || !dim) {
		throw new ModelLoadError(`encoder emitted shape [${tensor.dims}], expected [L, T, D]`)
	}
	return { layers, rows, dim, data: tensor.data }
}

async function loadSpeechExtractor(spec: ExtractorSpec, modelPath?: string): Promise<SpeechExtractor> {
	const session = await loadOnnxSession(spec, modelPath)
	const ort = await import('onnxruntime-node')
	return {
		async infer(samples) {
			const input = new ort.default.Tensor('float32', samples, [1, samples.length])
			const outputs = await session.run({ input_values: input })
			return statesFromOutput(outputs['hidden_states'] as OutputTensor)
		},
	}
}

async function loadLinguisticExtractor(spec: ExtractorSpec, modelPath?: string): Promise<LinguisticExtractor> {
	const session = await loadOnnxSession(spec, modelPath)
	const ort = await import('onnxruntime-node')
	return {
		async encode(phonemes) {
			const joined = phonemes.join(' ')
			const input = new ort.default.Tensor('string', [joined], [1])
			const outputs = await session.run({ phonemes: input })
			const states = statesFromOutput(outputs['hidden_states'] as OutputTensor)
			const maskData = (outputs['special_mask'] as OutputTensor).data
			const mask = Array.from(maskData, v => v !== 0)
			return { states, specialMask: mask }
		},
	}
}

export interface DumpOptions {
	manifestPath: string
	outDir: string
	kind: ExtractorKind
	model: string
	modelPath?: string
	stream?: string
}

function sliceRows(states: HiddenStates, rows: number[]): Float32Array {
	const out = new Float32Array(states.layers * rows.length * states.dim)
	for (let layer = 0; layer < states.layers; layer++) {
		for (let r = 0; r < rows.length; r++) {
			const src = (layer * states.rows + rows[r]!) * states.dim
			const dst = (layer * rows.length + r) * states.dim
			out.set(states.data.subarray(src, src + states.dim), dst)
		}
	}
	return out
}

/**
 * Export every hidden state of a pretrained encoder, one PFE1 file per
 * utterance.  Speech dumps trim padded frames back to the audio length;
 * linguistic dumps drop special-token rows so T equals the phoneme
 * count.  Per-utterance problems (bad audio, tokenization drift) are
 * collected and reported; the remaining files are still written.
 */
export async function dumpFeatures(options: DumpOptions): Promise<DumpReport> {
	const { manifestPath, outDir, kind, model } = options
	const spec = lookupModel(model, kind)
	const stream = options.stream ?? spec.model
	const records = parseManifest(manifestPath)
	const manifestDir = dirname(resolve(manifestPath))

	const extractor = kind === 'speech'
		? await loadSpeechExtractor(spec, options.modelPath)
		: await loadLinguisticExtractor(spec, options.modelPath)

	mkdirSync(outDir, { recursive: true })
	const written: string[] = []
	const ok = new Set<string>()
	const failures: DumpFailure[] = []
	for (const record of records) {
		try {
			let stack: FeatureStack
			if (kind === 'speech') {
				const audioRel = record.raw['audio']
				if (typeof audioRel !== 'string') {
					throw new Error('record has no audio path')
				}
				const audio = resampleLinear(readWav(resolve(manifestDir, audioRel)), spec.sampleRate!)
				const plan = planSpeechDump(spec, audio.samples.length)
				const padded = spec.paddedWindowSeconds
					? padTo(audio.samples, spec.paddedWindowSeconds * spec.sampleRate!)
					: audio.samples
				const states = await (extractor as SpeechExtractor).infer(padded)
				if (states.layers !== plan.layers || states.dim !== plan.dim) {
					throw new Error(
						`encoder emitted ${states.layers} layers x ${states.dim} dims, `
						+ `expected ${plan.layers} x ${plan.dim}`)
				}
				const keep = Array.from({ length: plan.frames }, (_, i) => i)
				stack = {
					layers: plan.layers,
					length: plan.frames,
					dim: plan.dim,
					axisKind: AxisKind.Frame,
					data: sliceRows(states, keep),
				}
			} else {
				const { states, specialMask } = await (extractor as LinguisticExtractor).encode(record.phonemes)
				const rows = contentRows(specialMask, record.phonemes.length)
				stack = {
					layers: states.layers,
					length: rows.length,
					dim: states.dim,
					axisKind: AxisKind.Phoneme,
					data: sliceRows(states, rows),
				}
			}
			const rel = featureRelPath(record.id, stream)
			writePfe(join(outDir, rel), stack)
			written.push(rel)
			ok.add(record.id)
		} catch (err) {
			failures.push({ id: record.id, error: (err as Error).message })
		}
	}

	const manifestCopy = writeManifestCopy(records, ok, stream, manifestPath, outDir)
	const metaPath = writeMeta(outDir, stream, {
		model: spec.model,
		kind,
		hop_ms: spec.hopMs ?? null,
		layers: exportedLayers(spec),
		dim: spec.hiddenSize,
		tap_point: spec.tapPoint,
		seed: null,
	})
	return { written, failures, manifestCopy, metaPath }
}

function padTo(samples: Float32Array, length: number): Float32Array {
	if (samples.length >= length) {
		return samples
	}
	const out = new Float32Array(length)
	out.set(samples)
	return out
}
