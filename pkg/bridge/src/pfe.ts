import { mkdirSync, readFileSync, writeFileSync } from 'node:fs'
import { dirname } from 'node:path'

// PFE1 wire format: 4-byte magic, five little-endian uint32 fields
// (version, L, T, D, axis kind), then L*T*D float32 values in
// layer-major order.  Axis kind 0 means the T axis counts frames,
// 1 means it counts phonemes.

export const MAGIC = 'PFE1'
export const FORMAT_VERSION = 1
export const HEADER_BYTES = 24

export enum AxisKind {
	Frame = 0,
	Phoneme = 1,
}

export interface FeatureStack {
	layers: number
	length: number
	dim: number
	axisKind: AxisKind
	/** layer-major values, exactly layers*length*dim entries */
	data: Float32Array
}

export class PfeFormatError extends Error {}

function checkShape(stack: FeatureStack) {
	const { layers, length, dim, data } = stack
	for (const [name, value] of [['layers', layers], ['length', length], ['dim', dim]] as const) {
		if (!Number.isInteger(value) || value < 1) {
			throw new PfeFormatError(`${name} must be a positive integer, got ${value}`)
		}
	}
	if (data.length !== layers * length * dim) {
		throw new PfeFormatError(
			`payload has ${data.length} values, shape implies ${layers * length * dim}`)
	}
	for (let i = 0; i < data.length; i++) {
		if (!Number.isFinite(data[i])) {
			throw new PfeFormatError(`non-finite value at flat index ${i}`)
		}
	}
}

export function encodePfe(stack: FeatureStack): Buffer {
	checkShape(stack)
	const buf = Buffer.alloc(HEADER_BYTES + 4 * stack.data.length)
	buf.write(MAGIC, 0, 'ascii')
	buf.writeUInt32LE(FORMAT_VERSION, 4)
	buf.writeUInt32LE(stack.layers, 8)
	buf.writeUInt32LE(stack.length, 12)
	buf.writeUInt32LE(stack.dim, 16)
	buf.writeUInt32LE(stack.axisKind, 20)
	for (let i = 0; i < stack.data.length; i++) {
		buf.writeFloatLE(stack.data[i]!, HEADER_BYTES + 4 * i)
	}
	return buf
}

export function decodePfe(buf: Buffer, source = '<buffer>'): FeatureStack {
	if (buf.length < HEADER_BYTES || buf.toString('ascii', 0, 4) !== MAGIC) {
		throw new PfeFormatError(`${source}: not a PFE1 feature file`)
	}
	const version = buf.readUInt32LE(4)
	if (version !== FORMAT_VERSION) {
		throw new PfeFormatError(`${source}: unsupported format version ${version}`)
	}
	const layers = buf.readUInt32LE(8)
	const length = buf.readUInt32LE(12)
	const dim = buf.readUInt32LE(16)
	const axis = buf.readUInt32LE(20)
	if (axis !== AxisKind.Frame && axis !== AxisKind.Phoneme) {
		throw new PfeFormatError(`${source}: bad axis kind ${axis}`)
	}
	if (Math.min(layers, length, dim) < 1) {
		throw new PfeFormatError(`${source}: zero-sized axis in header (${layers},${length},${dim})`)
	}
	const expected = 4 * layers * length * dim
	if (buf.length - HEADER_BYTES !== expected) {
		throw new PfeFormatError(
			`${source}: payload is ${buf.length - HEADER_BYTES} bytes, header implies ${expected}`)
	}
	const data = new Float32Array(layers * length * dim)
	for (let i = 0; i < data.length; i++) {
		const value = buf.readFloatLE(HEADER_BYTES + 4 * i)
		if (!Number.isFinite(value)) {
			throw new PfeFormatError(`${source}: payload contains non-finite values`)
		}
		data[i] = value
	}
	return { layers, length, dim, axisKind: axis, data }
}

export function writePfe(path: string, stack: FeatureStack) {
	mkdirSync(dirname(path), { recursive: true })
	writeFileSync(path, encodePfe(stack))
}

export function readPfe(path: string): FeatureStack {
	return decodePfe(readFileSync(path), path)
}
