import { describe, expect, it } from 'vitest'
import { readFileSync, readdirSync } from 'node:fs'
import { join, resolve } from 'node:path'

import { stubDump } from '../src/dump.js'
import { AxisKind, readPfe } from '../src/pfe.js'
import { ManifestError, parseManifest } from '../src/manifest.js'
import { labeledRows, scratchDir, writeManifest } from './helpers.js'

function dumpInto(dir: string, kind: 'speech' | 'linguistic', seed = 7, rows = labeledRows(3)) {
	const manifest = writeManifest(scratchDir('stub-src'), rows)
	return stubDump({ manifestPath: manifest, outDir: dir, kind, seed, layers: 4, dim: 16 })
}

describe('stub dumps', () => {
	it('speech stacks get one frame per duration unit', () => {
		const dir = scratchDir('stub')
		const report = dumpInto(dir, 'speech')
		expect(report.failures).toEqual([])
		expect(report.written).toHaveLength(3)
		const records = parseManifest(report.manifestCopy)
		for (const record of records) {
			const stack = readPfe(join(dir, 'features', `${record.id}.speech.pfe`))
			const total = record.durations.reduce((a, b) => a + b, 0)
			expect(stack.layers).toBe(4)
			expect(stack.length).toBe(total)
			expect(stack.dim).toBe(16)
			expect(stack.axisKind).toBe(AxisKind.Frame)
		}
	})

	it('linguistic stacks get one row per phoneme', () => {
		const dir = scratchDir('stub')
		const report = dumpInto(dir, 'linguistic')
		for (const record of parseManifest(report.manifestCopy)) {
			const stack = readPfe(join(dir, 'features', `${record.id}.ling.pfe`))
			expect(stack.length).toBe(record.phonemes.length)
			expect(stack.axisKind).toBe(AxisKind.Phoneme)
		}
	})

	it('reruns are byte-identical: features, manifest copy, and meta', () => {
		const rows = labeledRows(3)
		const a = scratchDir('stub-a')
		const b = scratchDir('stub-b')
		dumpInto(a, 'speech', 7, rows)
		dumpInto(b, 'speech', 7, rows)
		for (const name of readdirSync(join(a, 'features'))) {
			const bytesA = readFileSync(join(a, 'features', name))
			const bytesB = readFileSync(join(b, 'features', name))
			expect(bytesA.equals(bytesB)).toBe(true)
		}
		expect(readFileSync(join(a, 'meta.json')).equals(readFileSync(join(b, 'meta.json')))).toBe(true)
		expect(readFileSync(join(a, 'utts.jsonl')).equals(readFileSync(join(b, 'utts.jsonl')))).toBe(true)
	})

	it('payloads differ across utterances, streams, and seeds', () => {
		const dir = scratchDir('stub')
		dumpInto(dir, 'speech', 7)
		const utt0 = readPfe(join(dir, 'features', 'utt0.speech.pfe'))
		const utt1 = readPfe(join(dir, 'features', 'utt1.speech.pfe'))
		expect(utt0.data.subarray(0, 16)).not.toEqual(utt1.data.subarray(0, 16))

		const otherSeed = scratchDir('stub')
		dumpInto(otherSeed, 'speech', 8)
		const reseeded = readPfe(join(otherSeed, 'features', 'utt0.speech.pfe'))
		expect(reseeded.data.subarray(0, 16)).not.toEqual(utt0.data.subarray(0, 16))

		const renamed = scratchDir('stub')
		const manifest = writeManifest(scratchDir('stub-src'), labeledRows(1))
		stubDump({ manifestPath: manifest, outDir: renamed, kind: 'speech', seed: 7, layers: 4, dim: 16, stream: 'alt' })
		const alt = readPfe(join(renamed, 'features', 'utt0.alt.pfe'))
		expect(alt.data.subarray(0, 16)).not.toEqual(utt0.data.subarray(0, 16))
	})

	it('writes a meta sidecar describing the dump', () => {
		const dir = scratchDir('stub')
		const report = dumpInto(dir, 'speech', 11)
		const meta = JSON.parse(readFileSync(report.metaPath, 'utf-8'))
		expect(meta).toEqual({
			speech: {
				model: 'stub',
				kind: 'speech',
				hop_ms: null,
				layers: [0, 1, 2, 3],
				dim: 16,
				tap_point: null,
				seed: 11,
			},
		})
	})

	it('dumping two streams into one directory accumulates both', () => {
		const rows = labeledRows(2)
		const dir = scratchDir('stub')
		const manifest = writeManifest(scratchDir('stub-src'), rows)
		stubDump({ manifestPath: manifest, outDir: dir, kind: 'speech', seed: 7, layers: 4, dim: 16 })
		const report = stubDump({ manifestPath: manifest, outDir: dir, kind: 'linguistic', seed: 7, layers: 4, dim: 16 })

		for (const record of parseManifest(report.manifestCopy)) {
			const features = record.raw['features'] as Record<string, string>
			expect(Object.keys(features).sort()).toEqual(['ling', 'speech'])
			expect(() => readPfe(join(dir, features['speech']!))).not.toThrow()
			expect(() => readPfe(join(dir, features['ling']!))).not.toThrow()
		}
		const meta = JSON.parse(readFileSync(join(dir, 'meta.json'), 'utf-8'))
		expect(Object.keys(meta)).toEqual(['ling', 'speech'])
		expect(meta.speech.kind).toBe('speech')
		expect(meta.ling.kind).toBe('linguistic')
	})

	it('rebases feature refs carried over from the source manifest', () => {
		const srcDir = scratchDir('stub-src')
		const rows = [{
			id: 'a', phonemes: ['k', 'a'], durations: [2, 3],
			features: { aco: 'old/a.aco.pfe' },
		}]
		const manifest = writeManifest(srcDir, rows)
		const dir = scratchDir('stub')
		const report = stubDump({ manifestPath: manifest, outDir: dir, kind: 'speech', seed: 7, layers: 2, dim: 4 })
		const record = parseManifest(report.manifestCopy)[0]!
		const features = record.raw['features'] as Record<string, string>
		// the rebased ref still resolves to the same file
		expect(resolve(dir, features['aco']!)).toBe(resolve(srcDir, 'old/a.aco.pfe'))
		expect(features['speech']).toBe(join('features', 'a.speech.pfe'))
	})

	it('rerunning the same stream into the same directory is byte-stable', () => {
		const rows = labeledRows(2)
		const dir = scratchDir('stub')
		const manifest = writeManifest(scratchDir('stub-src'), rows)
		stubDump({ manifestPath: manifest, outDir: dir, kind: 'speech', seed: 7, layers: 4, dim: 16 })
		const copyBefore = readFileSync(join(dir, 'utts.jsonl'))
		const metaBefore = readFileSync(join(dir, 'meta.json'))
		stubDump({ manifestPath: manifest, outDir: dir, kind: 'speech', seed: 7, layers: 4, dim: 16 })
		expect(readFileSync(join(dir, 'utts.jsonl')).equals(copyBefore)).toBe(true)
		expect(readFileSync(join(dir, 'meta.json')).equals(metaBefore)).toBe(true)
	})

	it('manifest copies point every row at an existing feature file', () => {
		const dir = scratchDir('stub')
		const report = dumpInto(dir, 'linguistic')
		for (const record of parseManifest(report.manifestCopy)) {
			const features = record.raw['features'] as Record<string, string>
			expect(features['ling']).toBe(join('features', `${record.id}.ling.pfe`))
			expect(() => readPfe(join(dir, features['ling']!))).not.toThrow()
		}
	})

	it('refuses speech stubs for zero-length utterances', () => {
		const rows = [{ id: 'silent', phonemes: ['a'], durations: [0] }]
		const dir = scratchDir('stub')
		expect(() => dumpInto(dir, 'speech', 7, rows)).toThrow(ManifestError)
		// the same utterance is fine on the phoneme axis
		expect(() => dumpInto(scratchDir('stub'), 'linguistic', 7, rows)).not.toThrow()
	})

	it('validates its own knobs', () => {
		const manifest = writeManifest(scratchDir('stub-src'), labeledRows(1))
		const base = { manifestPath: manifest, outDir: scratchDir('stub'), kind: 'speech' as const }
		expect(() => stubDump({ ...base, seed: -1, layers: 4, dim: 16 })).toThrow(RangeError)
		expect(() => stubDump({ ...base, seed: 0, layers: 0, dim: 16 })).toThrow(RangeError)
		expect(() => stubDump({ ...base, seed: 0, layers: 4, dim: 1.5 })).toThrow(RangeError)
	})
})
