import { describe, expect, it } from 'vitest'
import { spawnSync } from 'node:child_process'
import { existsSync } from 'node:fs'
import { join } from 'node:path'

import { stubDump } from '../src/dump.js'
import { parseManifest, totalDuration } from '../src/manifest.js'
import { labeledRows, scratchDir, writeManifest } from './helpers.js'

// The consumer side of the interchange format is the installed
// `prosolabel` python package; these tests hand it real files, so a
// drifting header or payload layout fails here and nowhere else.

const READER = `
import sys
from prosolabel.features import read_features
t = read_features(sys.argv[1])
print(t.layers, t.length, t.dim, int(t.axis_kind))
`

function readViaConsumer(path: string): { layers: number; length: number; dim: number; axis: number } {
	const proc = spawnSync('python3', ['-c', READER, path], { encoding: 'utf-8' })
	expect(proc.status, proc.stderr).toBe(0)
	const [layers, length, dim, axis] = proc.stdout.trim().split(/\s+/).map(Number)
	return { layers: layers!, length: length!, dim: dim!, axis: axis! }
}

describe('consumer round trip', () => {
	it('speech stubs parse with T matching the summed durations', () => {
		const dir = scratchDir('rt')
		const manifest = writeManifest(scratchDir('rt-src'), labeledRows(4))
		const report = stubDump({ manifestPath: manifest, outDir: dir, kind: 'speech', seed: 3, layers: 5, dim: 8 })
		for (const record of parseManifest(report.manifestCopy)) {
			const shape = readViaConsumer(join(dir, 'features', `${record.id}.speech.pfe`))
			expect(shape.layers).toBe(5)
			expect(shape.dim).toBe(8)
			expect(shape.axis).toBe(0)
			expect(Math.abs(shape.length - totalDuration(record))).toBeLessThanOrEqual(2)
		}
	})

	it('linguistic stubs parse with one row per phoneme', () => {
		const dir = scratchDir('rt')
		const manifest = writeManifest(scratchDir('rt-src'), labeledRows(4))
		const report = stubDump({ manifestPath: manifest, outDir: dir, kind: 'linguistic', seed: 3, layers: 5, dim: 8 })
		for (const record of parseManifest(report.manifestCopy)) {
			const shape = readViaConsumer(join(dir, 'features', `${record.id}.ling.pfe`))
			expect(shape.axis).toBe(1)
			expect(shape.length).toBe(record.phonemes.length)
		}
	})

	it('a stub dump trains downstream without edits', () => {
		const dir = scratchDir('rt-train')
		const manifest = writeManifest(scratchDir('rt-src'), labeledRows(6))
		const report = stubDump({ manifestPath: manifest, outDir: dir, kind: 'speech', seed: 5, layers: 4, dim: 16 })
		const runDir = join(dir, 'run')
		const proc = spawnSync('prosolabel', [
			'train',
			'--train-manifest', report.manifestCopy,
			'--acoustic', 'speech',
			'--out', runDir,
			'--max-steps', '5',
			'--batch-size', '2',
			'--hidden', '8',
			'--n-layers', '2',
			'--kernel', '3',
		], { encoding: 'utf-8' })
		expect(proc.status, proc.stderr).toBe(0)
		expect(existsSync(join(runDir, 'checkpoint.pck'))).toBe(true)
	})

	it('speech and linguistic dumps into one directory train together', () => {
		const dir = scratchDir('rt-train2')
		const manifest = writeManifest(scratchDir('rt-src'), labeledRows(6))
		stubDump({ manifestPath: manifest, outDir: dir, kind: 'speech', seed: 5, layers: 4, dim: 16 })
		const report = stubDump({ manifestPath: manifest, outDir: dir, kind: 'linguistic', seed: 5, layers: 4, dim: 16 })
		const runDir = join(dir, 'run')
		const proc = spawnSync('prosolabel', [
			'train',
			'--train-manifest', report.manifestCopy,
			'--acoustic', 'speech',
			'--linguistic', 'ling',
			'--out', runDir,
			'--max-steps', '5',
			'--batch-size', '2',
			'--hidden', '8',
			'--n-layers', '2',
			'--kernel', '3',
		], { encoding: 'utf-8' })
		expect(proc.status, proc.stderr).toBe(0)
		expect(existsSync(join(runDir, 'checkpoint.pck'))).toBe(true)
	})
})
